use serde::{Deserialize, Serialize};

use crate::geometry::{cross, norm, sub};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera. Camera space follows the computer-vision convention:
/// x right, y down, z forward. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    /// World-to-camera rotation, row major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={fx} fy={fy}")]
    Focal { fx: f64, fy: f64 },
    #[error("image size must be at least 1x1, got {0}x{1}")]
    Size(u32, u32),
    #[error("look-at direction is degenerate")]
    Degenerate,
}

impl Camera {
    pub fn new(
        width: u32,
        height: u32,
        intrinsics: Intrinsics,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self, CameraError> {
        let cam = Camera {
            width,
            height,
            intrinsics,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let Intrinsics { fx, fy, .. } = self.intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::Focal { fx, fy });
        }
        if self.width < 1 || self.height < 1 {
            return Err(CameraError::Size(self.width, self.height));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with world +y up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], width: u32, height: u32, focal: f64) -> Result<Self, CameraError> {
        let f = sub(target, eye);
        let fl = norm(f);
        if fl < 1e-12 {
            return Err(CameraError::Degenerate);
        }
        let f = f.map(|c| c / fl);
        let r = cross(f, [0.0, 1.0, 0.0]);
        let rl = norm(r);
        if rl < 1e-9 {
            return Err(CameraError::Degenerate);
        }
        let r = r.map(|c| c / rl);
        let d = cross(f, r);
        let rotation = [r, d, f];
        let translation = [
            -(rotation[0][0] * eye[0] + rotation[0][1] * eye[1] + rotation[0][2] * eye[2]),
            -(rotation[1][0] * eye[0] + rotation[1][1] * eye[1] + rotation[1][2] * eye[2]),
            -(rotation[2][0] * eye[0] + rotation[2][1] * eye[1] + rotation[2][2] * eye[2]),
        ];
        Camera::new(
            width,
            height,
            Intrinsics {
                fx: focal,
                fy: focal,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
            },
            rotation,
            translation,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Camera-space point to continuous pixel coordinates.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let k = self.intrinsics;
        [k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy]
    }

    /// Camera-space point seen at pixel center `(i, j)` with depth `z`.
    pub fn back_project(&self, i: u32, j: u32, z: f64) -> [f64; 3] {
        let k = self.intrinsics;
        let u = i as f64 + 0.5;
        let v = j as f64 + 0.5;
        [(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_axes() {
        let cam = Camera::look_at([0.0, 0.0, -2.0], [0.0, 0.0, 0.0], 8, 6, 10.0).unwrap();
        let p = cam.world_to_camera([0.0, 0.0, 0.0]);
        assert!((p[2] - 2.0).abs() < 1e-12 && p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        // World up maps to image up (negative camera y).
        assert!(cam.world_to_camera([0.0, 1.0, 0.0])[1] < 0.0);
        let c = cam.center();
        assert!((c[2] + 2.0).abs() < 1e-12);
        assert!(Camera::look_at([0.0; 3], [0.0, 1.0, 0.0], 8, 6, 10.0).is_err());
        assert!(Camera::look_at([0.0; 3], [0.0, 0.0, 1.0], 0, 6, 10.0).is_err());
    }

    #[test]
    fn projection_round_trip() {
        let cam = Camera::look_at([1.0, 2.0, 3.0], [0.0, 0.4, 0.0], 64, 48, 60.0).unwrap();
        let p = cam.world_to_camera([0.1, 0.3, -0.2]);
        let [u, v] = cam.project(p);
        let (i, j) = (u - 0.5, v - 0.5);
        let k = cam.intrinsics;
        let back = [(i + 0.5 - k.cx) * p[2] / k.fx, (j + 0.5 - k.cy) * p[2] / k.fy, p[2]];
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
    }
}
