//! Polygon annotations of moving regions and their rasterization into a
//! guidance map.
//!
//! Text record (one item per line, `#` starts a comment):
//!
//! ```text
//! canvas <height> <width>
//! region <label> <x>,<y> <x>,<y> <x>,<y> ...
//! ```
//!
//! Vertices are in pixel units with the origin at the top-left corner of
//! the canvas; pixel `(row, col)` covers `[col, col+1) × [row, row+1)` and is
//! inside a polygon when its center is. Later regions paint over earlier
//! ones.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, MotionGuidance};

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub polygon: Vec<[f64; 2]>,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub height: usize,
    pub width: usize,
    pub regions: Vec<Region>,
}

impl Annotation {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            regions: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Annotation> {
        let mut canvas = None;
        let mut regions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::AnnotationParse { line: line_no, reason };
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("canvas") => {
                    if canvas.is_some() {
                        return Err(err("duplicate canvas line".into()));
                    }
                    let nums: Vec<&str> = parts.collect();
                    if nums.len() != 2 {
                        return Err(err("expected `canvas <height> <width>`".into()));
                    }
                    let h: usize = nums[0].parse().map_err(|_| err(format!("bad height {:?}", nums[0])))?;
                    let w: usize = nums[1].parse().map_err(|_| err(format!("bad width {:?}", nums[1])))?;
                    if h == 0 || w == 0 {
                        return Err(err("canvas must be non-empty".into()));
                    }
                    canvas = Some((h, w));
                }
                Some("region") => {
                    let label_s = parts.next().ok_or_else(|| err("missing region label".into()))?;
                    let label: u8 = label_s.parse().map_err(|_| err(format!("bad label {label_s:?}")))?;
                    let polygon = parts
                        .map(|v| {
                            let (x, y) = v.split_once(',').ok_or_else(|| err(format!("bad vertex {v:?}")))?;
                            let x: f64 = x.parse().map_err(|_| err(format!("bad vertex {v:?}")))?;
                            let y: f64 = y.parse().map_err(|_| err(format!("bad vertex {v:?}")))?;
                            Ok([x, y])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    regions.push(Region { polygon, label });
                }
                Some(other) => return Err(err(format!("unknown record {other:?}"))),
                None => {}
            }
        }
        let (height, width) = canvas.ok_or(Error::AnnotationParse {
            line: 0,
            reason: "missing canvas line".into(),
        })?;
        Ok(Annotation { height, width, regions })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("canvas {} {}\n", self.height, self.width);
        for r in &self.regions {
            let _ = write!(out, "region {}", r.label);
            for [x, y] in &r.polygon {
                let _ = write!(out, " {x},{y}");
            }
            out.push('\n');
        }
        out
    }

    /// Checks every region; the error names the first offending index.
    pub fn validate(&self, config: &GuidanceConfig) -> Result<()> {
        for (index, r) in self.regions.iter().enumerate() {
            let fail = |reason: String| Error::Annotation { index, reason };
            if r.polygon.len() < 3 {
                return Err(fail(format!("needs at least 3 vertices, has {}", r.polygon.len())));
            }
            if r.label as usize > config.num_directions {
                return Err(fail(format!(
                    "label {} out of range for {} directions",
                    r.label, config.num_directions
                )));
            }
            for &[x, y] in &r.polygon {
                if !x.is_finite() || !y.is_finite() {
                    return Err(fail("non-finite vertex".into()));
                }
                if x < 0.0 || y < 0.0 || x > self.width as f64 || y > self.height as f64 {
                    return Err(fail(format!("vertex ({x}, {y}) outside the canvas")));
                }
            }
            if signed_area(&r.polygon).abs() < 1e-12 {
                return Err(fail("polygon has zero area".into()));
            }
            if let Some((a, b)) = self_intersection(&r.polygon) {
                return Err(fail(format!("edges {a} and {b} intersect")));
            }
        }
        Ok(())
    }
}

fn signed_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let [x0, y0] = p[i];
            let [x1, y1] = p[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// First pair of non-adjacent edges that touch, if any.
fn self_intersection(p: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = p.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges may only share their common vertex; they
                // overlap when collinear and folding back.
                let (a, b, c) = if j == i + 1 {
                    (p[i], p[j], p[(j + 1) % n])
                } else {
                    (p[n - 1], p[0], p[1])
                };
                let back = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]);
                if orient(a, b, c) == 0.0 && back < 0.0 {
                    return Some((i, j));
                }
                continue;
            }
            if segments_touch(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Even-odd scanline fill of one polygon into `labels`.
fn fill_polygon(labels: &mut [u8], height: usize, width: usize, polygon: &[[f64; 2]], label: u8) {
    let n = polygon.len();
    let mut xs = Vec::with_capacity(n);
    for row in 0..height {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let [x0, y0] = polygon[i];
            let [x1, y1] = polygon[(i + 1) % n];
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Pixel centers col + 0.5 in [a, b).
            let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let end = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for col in start..end {
                labels[row * width + col] = label;
            }
        }
    }
}

pub fn rasterize_annotation(a: &Annotation, config: &GuidanceConfig) -> Result<MotionGuidance> {
    config.validate()?;
    a.validate(config)?;
    let mut labels = vec![0u8; a.height * a.width];
    for r in &a.regions {
        fill_polygon(&mut labels, a.height, a.width, &r.polygon, r.label);
    }
    MotionGuidance::new(a.height, a.width, labels, *config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    #[test]
    fn empty_is_static() {
        let g = rasterize_annotation(&Annotation::empty(6, 8), &GuidanceConfig::default()).unwrap();
        assert_eq!(g.count_moving(), 0);
    }

    #[test]
    fn left_half_rectangle() {
        let a = Annotation {
            height: 6,
            width: 8,
            regions: vec![Region {
                polygon: rect(0.0, 0.0, 4.0, 6.0),
                label: 2,
            }],
        };
        let g = rasterize_annotation(&a, &GuidanceConfig::default()).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(g.get(y, x), if x < 4 { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        let text = "# test\ncanvas 16 20\nregion 1 1,1 10,1 10,8\nregion 3 2.5,3 9,3 9,12 2.5,12\n";
        let a = Annotation::parse(text).unwrap();
        assert_eq!(a.regions.len(), 2);
        assert_eq!(a.regions[1].polygon[0], [2.5, 3.0]);
        assert_eq!(Annotation::parse(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn parse_errors_name_line() {
        assert!(matches!(
            Annotation::parse("canvas 4 4\nregion x 0,0 1,0 1,1"),
            Err(Error::AnnotationParse { line: 2, .. })
        ));
        assert!(matches!(
            Annotation::parse("region 1 0,0 1,0 1,1"),
            Err(Error::AnnotationParse { .. })
        ));
        assert!(Annotation::parse("canvas 4\n").is_err());
        assert!(Annotation::parse("canvas 4 4\nblob\n").is_err());
    }

    #[test]
    fn invalid_regions_are_named() {
        let cfg = GuidanceConfig::default();
        let bowtie = vec![[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 4.0]];
        let a = Annotation {
            height: 8,
            width: 8,
            regions: vec![
                Region {
                    polygon: rect(0.0, 0.0, 2.0, 2.0),
                    label: 1,
                },
                Region {
                    polygon: bowtie,
                    label: 1,
                },
            ],
        };
        assert!(matches!(
            rasterize_annotation(&a, &cfg),
            Err(Error::Annotation { index: 1, .. })
        ));

        let a = Annotation {
            height: 8,
            width: 8,
            regions: vec![Region {
                polygon: rect(0.0, 0.0, 2.0, 2.0),
                label: 9,
            }],
        };
        assert!(matches!(
            rasterize_annotation(&a, &cfg),
            Err(Error::Annotation { index: 0, .. })
        ));

        let a = Annotation {
            height: 8,
            width: 8,
            regions: vec![Region {
                polygon: vec![[0.0, 0.0], [1.0, 1.0]],
                label: 1,
            }],
        };
        assert!(rasterize_annotation(&a, &cfg).is_err());

        let a = Annotation {
            height: 8,
            width: 8,
            regions: vec![Region {
                polygon: rect(0.0, 0.0, 9.0, 2.0),
                label: 1,
            }],
        };
        assert!(rasterize_annotation(&a, &cfg).is_err());
    }

    #[test]
    fn orientation_does_not_matter() {
        let cfg = GuidanceConfig::default();
        let tri = vec![[1.0, 1.0], [14.0, 3.5], [5.5, 12.0]];
        let mut rev = tri.clone();
        rev.reverse();
        let g1 = rasterize_annotation(
            &Annotation {
                height: 16,
                width: 16,
                regions: vec![Region { polygon: tri, label: 4 }],
            },
            &cfg,
        )
        .unwrap();
        let g2 = rasterize_annotation(
            &Annotation {
                height: 16,
                width: 16,
                regions: vec![Region { polygon: rev, label: 4 }],
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(g1, g2);
        assert!(g1.count_moving() > 0);
    }
}
