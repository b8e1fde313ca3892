//! Non-covariant four-point weight `W`: the volume of relative time
//! configurations `(t2, t3, t4)` (with `t1 = 0`) for which all six point
//! pairs are spacelike separated, at fixed spatial separations.
//!
//! Separations are ordered `(d12, d13, d14, d23, d24, d34)`. The inner
//! `(t3, t4)` area is exact (a rectangle cut by a diagonal band); the outer
//! `t2` integrand is then piecewise quadratic, so Simpson's rule between its
//! breakpoints is exact.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `int_{-inf}^{y} clamp(s, 0, l) ds`.
fn clamp_integral(y: f64, l: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y <= l {
        0.5 * y * y
    } else {
        0.5 * l * l + l * (y - l)
    }
}

/// Area of `[a, b] x [c, d]` intersected with `|s - u| < h`.
fn band_area(a: f64, b: f64, c: f64, d: f64, h: f64) -> f64 {
    let l1 = d - c;
    let l2 = b - a;
    if l1 <= 0.0 || l2 <= 0.0 {
        return 0.0;
    }
    let above = clamp_integral(b - h - c, l1) - clamp_integral(a - h - c, l1);
    let below = clamp_integral(d - h - a, l2) - clamp_integral(c - h - a, l2);
    (l1 * l2 - above - below).max(0.0)
}

struct Limits {
    d: [f64; 6],
}

impl Limits {
    /// `(a, b, c, d)` of the `(t3, t4)` rectangle at a given `t2`.
    fn rect(&self, t2: f64) -> (f64, f64, f64, f64) {
        let [_, d13, d14, d23, d24, _] = self.d;
        (
            (-d13).max(t2 - d23),
            d13.min(t2 + d23),
            (-d14).max(t2 - d24),
            d14.min(t2 + d24),
        )
    }

    fn area(&self, t2: f64) -> f64 {
        let (a, b, c, d) = self.rect(t2);
        band_area(a, b, c, d, self.d[5])
    }

    /// Linear functions of `t2` whose zeros are kinks of `area`.
    fn kink_functions(&self, t2: f64) -> [f64; 10] {
        let (a, b, c, d) = self.rect(t2);
        let h = self.d[5];
        let (l1, l2) = (d - c, b - a);
        let (g1, g2, g3, g4) = (b - h - c, a - h - c, d - h - a, c - h - a);
        [g1, g1 - l1, g2, g2 - l1, g3, g3 - l2, g4, g4 - l2, l1, l2]
    }
}

/// `W` for physical separations (`c = 1`). Coincident points give zero.
pub fn weight_w_trivial(seps: [f64; 6]) -> f64 {
    if seps.iter().any(|&s| s <= 0.0) {
        return 0.0;
    }
    let lim = Limits { d: seps };
    let [d12, d13, d14, d23, d24, _] = seps;
    let (lo, hi) = (-d12, d12);
    let mut primary = vec![lo, hi, d23 - d13, d13 - d23, d24 - d14, d14 - d24];
    primary.retain(|&p| p >= lo && p <= hi);
    primary.sort_by(f64::total_cmp);
    primary.dedup();

    let mut points = primary.clone();
    for w in primary.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q - p <= 0.0 {
            continue;
        }
        let fp = lim.kink_functions(p);
        let fq = lim.kink_functions(q);
        for k in 0..fp.len() {
            if (fp[k] < 0.0 && fq[k] > 0.0) || (fp[k] > 0.0 && fq[k] < 0.0) {
                points.push(p + (q - p) * fp[k] / (fp[k] - fq[k]));
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    points
        .windows(2)
        .map(|w| {
            let (p, q) = (w[0], w[1]);
            (q - p) / 6.0 * (lim.area(p) + 4.0 * lim.area(0.5 * (p + q)) + lim.area(q))
        })
        .sum()
}

/// Permutation of the six pair separations induced by relabelling points.
pub fn permute_separations(seps: [f64; 6], perm: [usize; 4]) -> [f64; 6] {
    let pair = |i: usize, j: usize| -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        match (i, j) {
            (0, 1) => 0,
            (0, 2) => 1,
            (0, 3) => 2,
            (1, 2) => 3,
            (1, 3) => 4,
            (2, 3) => 5,
            _ => unreachable!("distinct labels"),
        }
    };
    let mut out = [0.0; 6];
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    for (slot, (i, j)) in pairs.into_iter().enumerate() {
        out[slot] = seps[pair(perm[i], perm[j])];
    }
    out
}

const CACHE_FORMAT: &str = "vpcollapse-weight-table";
const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    checksum: String,
    entries: Vec<([u32; 6], f64)>,
}

fn checksum(entries: &[([u32; 6], f64)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in entries {
        for x in k {
            h.update(x.to_le_bytes());
        }
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Memoized `W` at integer separations (units of the lattice spacing).
/// Physical `W` is `dx^3` times the tabulated value.
#[derive(Debug, Default, Clone)]
pub struct WeightTable {
    entries: HashMap<[u32; 6], f64>,
}

impl WeightTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, steps: [u32; 6]) -> f64 {
        *self
            .entries
            .entry(steps)
            .or_insert_with(|| weight_w_trivial(steps.map(f64::from)))
    }

    /// Loads a cache file; a missing, corrupt or outdated file yields an
    /// empty table (values are recomputed on demand).
    pub fn load_or_new(path: &Path) -> Self {
        match Self::load(path) {
            Ok(t) => t,
            Err(e) => {
                if path.exists() {
                    log::warn!("ignoring weight cache {}: {e}", path.display());
                }
                Self::new()
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CacheFile =
            serde_json::from_str(&text).map_err(|e| Error::Container(e.to_string()))?;
        if file.format != CACHE_FORMAT || file.version != CACHE_VERSION {
            return Err(Error::Container(format!(
                "unexpected header {} v{}",
                file.format, file.version
            )));
        }
        if checksum(&file.entries) != file.checksum {
            return Err(Error::Container("checksum mismatch".into()));
        }
        Ok(Self {
            entries: file.entries.into_iter().collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<([u32; 6], f64)> =
            self.entries.iter().map(|(k, v)| (*k, *v)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let file = CacheFile {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            checksum: checksum(&entries),
            entries,
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }
}
