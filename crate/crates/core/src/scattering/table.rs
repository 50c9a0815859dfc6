//! Tabulated amplitudes on a (speed_in, cos theta) grid.
//!
//! Text format, `#` starts a comment, blank lines ignored:
//!
//! ```text
//! levels 2
//! speeds 0.0 0.5 1.0 2.0
//! cos_theta -1.0 0.0 1.0
//! # m k speed_in cos_theta re im   (levels are 1-based)
//! 1 1 0.0 -1.0 0.10 0.02
//! ...
//! ```
//!
//! Every `(m, k, speed, cos_theta)` combination must appear exactly once.
//! Speeds and angles must match grid values to within `1e-12` relative.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeTable {
    pub levels: usize,
    pub speeds: Vec<f64>,
    pub cos_theta: Vec<f64>,
    /// `values[((m * levels + k) * speeds.len() + s) * cos_theta.len() + c]`, 0-based.
    pub values: Vec<Complex64>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::MalformedTable(format!("line {line}: {msg}"))
}

fn parse_floats(line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| s.parse::<f64>().map_err(|e| bad(line, format!("`{s}`: {e}"))))
        .collect()
}

fn locate(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter()
        .position(|&g| (g - v).abs() <= 1e-12 * g.abs().max(v.abs()).max(1.0))
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

impl AmplitudeTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut levels = None;
        let mut speeds: Option<Vec<f64>> = None;
        let mut cos_theta: Option<Vec<f64>> = None;
        let mut values: Vec<Option<Complex64>> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[0] {
                "levels" => {
                    if fields.len() != 2 {
                        return Err(bad(lineno, "expected `levels <n>`"));
                    }
                    let n: usize = fields[1].parse().map_err(|e| bad(lineno, e))?;
                    if n == 0 {
                        return Err(bad(lineno, "level count must be positive"));
                    }
                    levels = Some(n);
                }
                "speeds" => speeds = Some(parse_floats(lineno, &fields[1..])?),
                "cos_theta" => cos_theta = Some(parse_floats(lineno, &fields[1..])?),
                _ => {
                    let (Some(n), Some(sp), Some(ct)) = (levels, speeds.as_ref(), cos_theta.as_ref())
                    else {
                        return Err(bad(lineno, "data row before the levels/speeds/cos_theta header"));
                    };
                    if values.is_empty() {
                        if sp.is_empty() || !strictly_increasing(sp) || sp[0] < 0.0 {
                            return Err(bad(lineno, "speed grid must be non-empty, non-negative and increasing"));
                        }
                        if ct.len() < 2
                            || !strictly_increasing(ct)
                            || ct[0] < -1.0 - 1e-12
                            || ct[ct.len() - 1] > 1.0 + 1e-12
                        {
                            return Err(bad(lineno, "cos_theta grid must be increasing within [-1, 1] with at least 2 points"));
                        }
                        values = vec![None; n * n * sp.len() * ct.len()];
                    }
                    if fields.len() != 6 {
                        return Err(bad(lineno, "expected `m k speed_in cos_theta re im`"));
                    }
                    let m: usize = fields[0].parse().map_err(|e| bad(lineno, e))?;
                    let k: usize = fields[1].parse().map_err(|e| bad(lineno, e))?;
                    if m == 0 || k == 0 || m > n || k > n {
                        return Err(bad(lineno, format!("level index out of range 1..={n}")));
                    }
                    let nums = parse_floats(lineno, &fields[2..])?;
                    let s = locate(sp, nums[0]).ok_or_else(|| bad(lineno, format!("speed {} not on grid", nums[0])))?;
                    let c = locate(ct, nums[1]).ok_or_else(|| bad(lineno, format!("cos_theta {} not on grid", nums[1])))?;
                    let idx = (((m - 1) * n + (k - 1)) * sp.len() + s) * ct.len() + c;
                    if values[idx].is_some() {
                        return Err(bad(lineno, "duplicate row"));
                    }
                    values[idx] = Some(Complex64::new(nums[2], nums[3]));
                }
            }
        }
        let levels = levels.ok_or_else(|| Error::MalformedTable("missing `levels` header".into()))?;
        let speeds = speeds.ok_or_else(|| Error::MalformedTable("missing `speeds` header".into()))?;
        let cos_theta = cos_theta.ok_or_else(|| Error::MalformedTable("missing `cos_theta` header".into()))?;
        let expected = levels * levels * speeds.len() * cos_theta.len();
        let filled = values.iter().filter(|v| v.is_some()).count();
        if filled != expected {
            return Err(Error::MalformedTable(format!("expected {expected} rows, found {filled}")));
        }
        Ok(Self {
            levels,
            speeds,
            cos_theta,
            values: values.into_iter().map(|v| v.unwrap_or_default()).collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("levels {}\n", self.levels));
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(" ");
        out.push_str(&format!("speeds {}\n", join(&self.speeds)));
        out.push_str(&format!("cos_theta {}\n", join(&self.cos_theta)));
        out.push_str("# m k speed_in cos_theta re im\n");
        for m in 0..self.levels {
            for k in 0..self.levels {
                for (s, &sp) in self.speeds.iter().enumerate() {
                    for (c, &ct) in self.cos_theta.iter().enumerate() {
                        let v = self.values[self.index(m, k, s, c)];
                        out.push_str(&format!(
                            "{} {} {sp:.17e} {ct:.17e} {:.17e} {:.17e}\n",
                            m + 1,
                            k + 1,
                            v.re,
                            v.im
                        ));
                    }
                }
            }
        }
        out
    }

    #[inline]
    fn index(&self, m: usize, k: usize, s: usize, c: usize) -> usize {
        ((m * self.levels + k) * self.speeds.len() + s) * self.cos_theta.len() + c
    }

    /// Bilinear interpolation; speed is clamped to the grid, angle to [-1, 1].
    pub fn eval(&self, m: usize, k: usize, speed_in: f64, cos_theta: f64) -> Complex64 {
        let (s0, s1, ts) = bracket(&self.speeds, speed_in);
        let (c0, c1, tc) = bracket(&self.cos_theta, cos_theta);
        let v = |s, c| self.values[self.index(m, k, s, c)];
        (v(s0, c0) * (1.0 - tc) + v(s0, c1) * tc) * (1.0 - ts) + (v(s1, c0) * (1.0 - tc) + v(s1, c1) * tc) * ts
    }
}

fn bracket(grid: &[f64], t: f64) -> (usize, usize, f64) {
    let n = grid.len();
    if n == 1 || t <= grid[0] {
        return (0, 0, 0.0);
    }
    if t >= grid[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let i = grid.partition_point(|&g| g <= t) - 1;
    (i, i + 1, (t - grid[i]) / (grid[i + 1] - grid[i]))
}
