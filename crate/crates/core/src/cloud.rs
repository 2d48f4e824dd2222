//! Point clouds and the `p2s-cloud v1` ASCII format.
//!
//! Axis convention: `+z` is the direction a musician faces, `+y` is stature
//! (up), `x` is the side axis. Units are meters; colors are in `[0, 1]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Option<Vec<[f64; 3]>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::Shape(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(PointCloud { points, colors })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    /// Drops the color channel (depth-only scenes).
    pub fn without_colors(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            colors: None,
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn translate(&mut self, d: [f64; 3]) {
        for p in &mut self.points {
            for k in 0..3 {
                p[k] += d[k];
            }
        }
    }

    /// Rotates about the vertical axis by `angle` radians. Positive angles are
    /// counterclockwise seen from above: a point at azimuth `a`, i.e.
    /// `(sin a, y, cos a)`, moves to azimuth `a + angle`.
    pub fn rotate_y(&mut self, angle: f64) {
        let (s, c) = angle.sin_cos();
        for p in &mut self.points {
            let (x, z) = (p[0], p[2]);
            p[0] = x * c + z * s;
            p[2] = -x * s + z * c;
        }
    }

    /// Appends another cloud. Colors are kept only if both clouds have them.
    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        match (&mut self.colors, &other.colors) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            _ => self.colors = None,
        }
    }

    pub fn to_text(&self) -> String {
        let has_rgb = self.colors.is_some();
        let mut s = String::with_capacity(self.points.len() * 48);
        let _ = writeln!(s, "p2s-cloud v1 {} {}", self.points.len(), u8::from(has_rgb));
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
            if let Some(c) = &self.colors {
                let _ = write!(s, " {} {} {}", c[i][0], c[i][1], c[i][2]);
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "p2s-cloud" || fields[1] != "v1" {
            return Err(Error::parse(origin, format!("bad header {header:?}")));
        }
        let n: usize = fields[2]
            .parse()
            .map_err(|_| Error::parse(origin, "bad point count"))?;
        let has_rgb = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(origin, format!("bad rgb flag {other:?}"))),
        };
        let width = if has_rgb { 6 } else { 3 };
        let mut points = Vec::with_capacity(n);
        let mut colors = has_rgb.then(|| Vec::with_capacity(n));
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != width {
                return Err(Error::parse(
                    origin,
                    format!("line {}: expected {width} values, got {}", lineno + 2, vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(origin, format!("line {}: non-finite value", lineno + 2)));
            }
            points.push([vals[0], vals[1], vals[2]]);
            if let Some(c) = &mut colors {
                c.push([vals[3], vals[4], vals[5]]);
            }
        }
        if points.len() != n {
            return Err(Error::parse(
                origin,
                format!("header declares {n} points, found {}", points.len()),
            ));
        }
        PointCloud::new(points, colors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = PointCloud::new(
            vec![[0.1, -2.5, 3.0], [1e-3, 0.0, 7.25]],
            Some(vec![[1.0, 0.5, 0.0], [0.2, 0.3, 0.4]]),
        )
        .unwrap();
        let back = PointCloud::parse(&c.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, c);
        let d = c.without_colors();
        assert_eq!(PointCloud::parse(&d.to_text(), Path::new("mem")).unwrap(), d);
    }

    #[test]
    fn rejects_non_finite_and_bad_counts() {
        let p = Path::new("mem");
        assert!(PointCloud::parse("p2s-cloud v1 1 0\nNaN 0 0\n", p).is_err());
        assert!(PointCloud::parse("p2s-cloud v1 1 0\ninf 0 0\n", p).is_err());
        assert!(PointCloud::parse("p2s-cloud v1 2 0\n0 0 0\n", p).is_err());
        assert!(PointCloud::parse("p2s-cloud v2 1 0\n0 0 0\n", p).is_err());
        assert!(PointCloud::parse("p2s-cloud v1 1 1\n0 0 0\n", p).is_err());
    }

    #[test]
    fn rotate_quarter_turn_moves_front_to_left() {
        let mut c = PointCloud::new(vec![[0.0, 0.3, 2.0]], None).unwrap();
        c.rotate_y(std::f64::consts::FRAC_PI_2);
        let p = c.points[0];
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 0.3).abs() < 1e-12 && p[2].abs() < 1e-12);
    }
}
