use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Pixel;

/// Observed tag corners in pixel coordinates.
///
/// Corners are ordered counter-clockwise starting at the lower-left corner
/// when the tag is viewed from its +z side, matching [`tag_corners`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagDetection {
    pub tag_id: u32,
    pub corners: [Pixel; 4],
    pub camera: String,
    pub timestamp: f64,
}

/// Corner positions of a square tag of side `size` in the tag frame.
pub fn tag_corners(size: f64) -> [Vector3<f64>; 4] {
    let h = size / 2.0;
    [
        Vector3::new(-h, -h, 0.0),
        Vector3::new(h, -h, 0.0),
        Vector3::new(h, h, 0.0),
        Vector3::new(-h, h, 0.0),
    ]
}

impl TagDetection {
    /// `timestamp,camera,tag_id,u0,v0,...,u3,v3`
    pub fn to_csv_line(&self) -> String {
        let mut s = format!("{:.6},{},{}", self.timestamp, self.camera, self.tag_id);
        for c in &self.corners {
            let _ = write!(s, ",{:.4},{:.4}", c[0], c[1]);
        }
        s
    }

    pub fn from_csv_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 11 {
            return Err(format!("expected 11 fields, got {}", fields.len()));
        }
        let num = |i: usize| -> Result<f64, String> {
            fields[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"))
        };
        let mut corners = [[0.0; 2]; 4];
        for (k, c) in corners.iter_mut().enumerate() {
            *c = [num(3 + 2 * k)?, num(4 + 2 * k)?];
        }
        Ok(Self {
            timestamp: num(0)?,
            camera: fields[1].to_string(),
            tag_id: fields[2].parse().map_err(|e| format!("field 2: {e}"))?,
            corners,
        })
    }
}
