//! Exact decomposition of a blurry image given the true frame-to-frame
//! flows.
//!
//! Unknowns are the linear-space values of every pixel of every frame.
//! Brightness constancy along a flow vector says two unknowns are equal, so
//! unknowns are first merged into equality classes (pixel chains). The
//! exposure average then gives one equation per pixel over those classes.
//! Each connected block of that sparse system is solved on its own; only
//! classes the block pins down uniquely are reported as recovered, the rest
//! are marked invalid and filled with the blurry value.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::flow::FlowField;
use crate::image::{gamma_decode, gamma_encode, Image};
use crate::scenegen::{BlurryImage, SharpSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverRoute {
    /// Gauss–Jordan elimination with partial pivoting.
    Elimination,
    /// Minimum-norm least squares through an SVD.
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactOptions {
    /// Treat the canvas as a torus when following flows.
    pub wrap: bool,
    pub route: SolverRoute,
    /// Residual above which a block is reported inconsistent.
    pub tolerance: f64,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            wrap: false,
            route: SolverRoute::Elimination,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualReport {
    pub frames: usize,
    pub pixels_per_frame: usize,
    /// Equality classes after merging along valid flow vectors.
    pub chains: usize,
    pub determined_chains: usize,
    /// Frame pixels whose value was recovered exactly.
    pub valid_pixels: usize,
    /// Frame pixels filled from the blurry image.
    pub invalid_pixels: usize,
    /// Flow vectors that leave the canvas.
    pub exiting_vectors: usize,
    /// Flow vectors dropped because their target is hit more than once.
    pub occluded_vectors: usize,
    pub blocks: usize,
    pub inconsistent_blocks: usize,
    /// Largest |re-blurred − blurry| (linear space) over pixels whose whole
    /// column through time is valid.
    pub max_reblur_residual: f64,
    /// Largest residual of any equation of any block.
    pub max_equation_residual: f64,
}

impl ResidualReport {
    pub fn summary(&self) -> String {
        format!(
            "frames {}\npixels_per_frame {}\nchains {}\ndetermined_chains {}\nvalid_pixels {}\ninvalid_pixels {}\n\
             exiting_vectors {}\noccluded_vectors {}\nblocks {}\ninconsistent_blocks {}\n\
             max_reblur_residual {:e}\nmax_equation_residual {:e}\n",
            self.frames,
            self.pixels_per_frame,
            self.chains,
            self.determined_chains,
            self.valid_pixels,
            self.invalid_pixels,
            self.exiting_vectors,
            self.occluded_vectors,
            self.blocks,
            self.inconsistent_blocks,
            self.max_reblur_residual,
            self.max_equation_residual
        )
    }
}

#[derive(Clone, Debug)]
pub struct ExactDecomposition {
    /// Gamma-encoded frames.
    pub sequence: SharpSequence,
    /// Linear-space frames before encoding.
    pub linear: Vec<Image>,
    /// `valid[t][y * W + x]`.
    pub valid: Vec<Vec<bool>>,
    pub report: ResidualReport,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Result of solving one block: per-column values (3 channels) and whether
/// the column is uniquely determined.
struct BlockSolution {
    values: Vec<[f64; 3]>,
    determined: Vec<bool>,
}

fn solve_block_elimination(a: &DMatrix<f64>, b: &DMatrix<f64>) -> BlockSolution {
    let (m, k) = a.shape();
    let mut aug = DMatrix::<f64>::zeros(m, k + 3);
    aug.view_mut((0, 0), (m, k)).copy_from(a);
    aug.view_mut((0, k), (m, 3)).copy_from(b);
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    let eps = 1e-10 * scale;
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for col in 0..k {
        if row == m {
            break;
        }
        let (best, best_abs) =
            (row..m)
                .map(|r| (r, aug[(r, col)].abs()))
                .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs <= eps {
            continue;
        }
        aug.swap_rows(row, best);
        let p = aug[(row, col)];
        for c in col..k + 3 {
            aug[(row, c)] /= p;
        }
        for r in 0..m {
            if r != row {
                let f = aug[(r, col)];
                if f != 0.0 {
                    for c in col..k + 3 {
                        let v = aug[(row, c)];
                        aug[(r, c)] -= f * v;
                    }
                }
            }
        }
        pivots.push((row, col));
        row += 1;
    }
    let mut is_pivot = vec![false; k];
    for &(_, c) in &pivots {
        is_pivot[c] = true;
    }
    let mut values = vec![[0.0; 3]; k];
    let mut determined = vec![false; k];
    for &(r, c) in &pivots {
        let free_coupled = (0..k).any(|j| !is_pivot[j] && aug[(r, j)].abs() > 1e-9);
        determined[c] = !free_coupled;
        values[c] = [aug[(r, k)], aug[(r, k + 1)], aug[(r, k + 2)]];
    }
    BlockSolution { values, determined }
}

fn solve_block_least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> BlockSolution {
    let (m, k) = a.shape();
    // Pad to a square-or-tall matrix so the SVD exposes the full right
    // singular basis.
    let padded = if m < k {
        let mut p = DMatrix::<f64>::zeros(k, k);
        p.view_mut((0, 0), (m, k)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |s, v| s.max(*v));
    let eps = 1e-10 * smax.max(1e-300);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut null_weight = vec![0.0; k];
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= eps {
            for (j, w) in null_weight.iter_mut().enumerate() {
                *w += v_t[(i, j)] * v_t[(i, j)];
            }
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(padded.nrows(), 3);
    rhs.view_mut((0, 0), (m, 3)).copy_from(b);
    let x = svd.solve(&rhs, eps).expect("svd with u and v_t");
    BlockSolution {
        values: (0..k).map(|j| [x[(j, 0)], x[(j, 1)], x[(j, 2)]]).collect(),
        determined: null_weight.iter().map(|w| *w < 1e-12).collect(),
    }
}

/// Recovers the `T` sharp frames of `blurry` from its `T − 1` forward flows.
///
/// Flows are rounded to whole pixels. A flow vector whose target leaves the
/// canvas (without `wrap`) or whose target pixel receives more than one
/// vector is not used as an equality.
pub fn decompose_exact(
    blurry: &BlurryImage,
    flows: &[FlowField],
    t: usize,
    options: &ExactOptions,
) -> Result<ExactDecomposition> {
    if t < 2 {
        return Err(Error::Domain(format!("T must be >= 2 (got {t})")));
    }
    if flows.len() != t - 1 {
        return Err(shape_err(format!("{} flow fields", t - 1), flows.len()));
    }
    let (h, w) = blurry.image.dims();
    for f in flows {
        if f.dims() != (h, w) {
            return Err(shape_err(format!("{h}x{w}"), format!("{}x{}", f.height(), f.width())));
        }
        if !f.is_finite() {
            return Err(Error::Domain("non-finite flow".into()));
        }
    }
    let hw = h * w;
    let nodes = t * hw;
    let linear_b = gamma_decode(&blurry.image, blurry.gamma)?;
    let mut report = ResidualReport {
        frames: t,
        pixels_per_frame: hw,
        ..Default::default()
    };

    // Flow targets.
    let mut target = vec![None::<usize>; (t - 1) * hw];
    let mut hits = vec![0u32; nodes];
    for (ft, f) in flows.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let [dx, dy] = f.get(y, x);
                let (mut ty, mut tx) = (y as i64 + dy.round() as i64, x as i64 + dx.round() as i64);
                if options.wrap {
                    ty = ty.rem_euclid(h as i64);
                    tx = tx.rem_euclid(w as i64);
                } else if ty < 0 || tx < 0 || ty >= h as i64 || tx >= w as i64 {
                    report.exiting_vectors += 1;
                    continue;
                }
                let q = (ft + 1) * hw + ty as usize * w + tx as usize;
                target[ft * hw + y * w + x] = Some(q);
                hits[q] += 1;
            }
        }
    }
    let mut uf = UnionFind::new(nodes);
    for (src, tgt) in target.iter().enumerate() {
        if let Some(q) = *tgt {
            if hits[q] == 1 {
                uf.union(src, q);
            } else {
                report.occluded_vectors += 1;
            }
        }
    }

    // Dense class ids.
    let mut class_of_root = vec![usize::MAX; nodes];
    let mut class = vec![0usize; nodes];
    let mut classes = 0;
    for n in 0..nodes {
        let r = uf.find(n);
        if class_of_root[r] == usize::MAX {
            class_of_root[r] = classes;
            classes += 1;
        }
        class[n] = class_of_root[r];
    }
    report.chains = classes;

    // Blocks: classes connected through a shared pixel equation.
    let mut blocks_uf = UnionFind::new(classes);
    for p in 0..hw {
        let c0 = class[p];
        for ft in 1..t {
            blocks_uf.union(c0, class[ft * hw + p]);
        }
    }
    let mut block_of_root = vec![usize::MAX; classes];
    let mut block_classes: Vec<Vec<usize>> = Vec::new();
    let mut block_of_class = vec![0usize; classes];
    for c in 0..classes {
        let r = blocks_uf.find(c);
        if block_of_root[r] == usize::MAX {
            block_of_root[r] = block_classes.len();
            block_classes.push(Vec::new());
        }
        block_of_class[c] = block_of_root[r];
        block_classes[block_of_root[r]].push(c);
    }
    let mut block_pixels: Vec<Vec<usize>> = vec![Vec::new(); block_classes.len()];
    for p in 0..hw {
        block_pixels[block_of_class[class[p]]].push(p);
    }
    report.blocks = block_classes.len();

    let inv_t = 1.0 / t as f64;
    let mut class_value = vec![[0.0; 3]; classes];
    let mut class_ok = vec![false; classes];
    let mut local = vec![usize::MAX; classes];
    for (bi, members) in block_classes.iter().enumerate() {
        for (j, &c) in members.iter().enumerate() {
            local[c] = j;
        }
        let pixels = &block_pixels[bi];
        let (m, k) = (pixels.len(), members.len());
        let mut a = DMatrix::<f64>::zeros(m, k);
        let mut b = DMatrix::<f64>::zeros(m, 3);
        for (r, &p) in pixels.iter().enumerate() {
            for ft in 0..t {
                a[(r, local[class[ft * hw + p]])] += inv_t;
            }
            let v = linear_b.get(p / w, p % w);
            for ch in 0..3 {
                b[(r, ch)] = v[ch];
            }
        }
        let sol = match options.route {
            SolverRoute::Elimination => solve_block_elimination(&a, &b),
            SolverRoute::LeastSquares => solve_block_least_squares(&a, &b),
        };
        // Equation residual of the returned solution.
        let mut block_res = 0.0f64;
        for r in 0..m {
            for ch in 0..3 {
                let mut s = 0.0;
                for j in 0..k {
                    s += a[(r, j)] * sol.values[j][ch];
                }
                block_res = block_res.max((s - b[(r, ch)]).abs());
            }
        }
        report.max_equation_residual = report.max_equation_residual.max(block_res);
        let consistent = block_res <= options.tolerance;
        if !consistent {
            report.inconsistent_blocks += 1;
        }
        for (j, &c) in members.iter().enumerate() {
            class_value[c] = sol.values[j];
            class_ok[c] = consistent && sol.determined[j];
        }
    }
    report.determined_chains = class_ok.iter().filter(|v| **v).count();

    let mut linear = Vec::with_capacity(t);
    let mut valid = Vec::with_capacity(t);
    for ft in 0..t {
        let mut frame = Image::zeros(h, w);
        let mut ok = vec![false; hw];
        for p in 0..hw {
            let c = class[ft * hw + p];
            let (y, x) = (p / w, p % w);
            if class_ok[c] {
                frame.set(y, x, class_value[c]);
                ok[p] = true;
                report.valid_pixels += 1;
            } else {
                frame.set(y, x, linear_b.get(y, x));
                report.invalid_pixels += 1;
            }
        }
        linear.push(frame);
        valid.push(ok);
    }

    for p in 0..hw {
        if (0..t).all(|ft| valid[ft][p]) {
            let (y, x) = (p / w, p % w);
            let b = linear_b.get(y, x);
            for ch in 0..3 {
                let mean = (0..t).map(|ft| linear[ft].get(y, x)[ch]).sum::<f64>() * inv_t;
                report.max_reblur_residual = report.max_reblur_residual.max((mean - b[ch]).abs());
            }
        }
    }

    let encoded = linear
        .iter()
        .map(|f| gamma_encode(&f.clamp01(), blurry.gamma))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExactDecomposition {
        sequence: SharpSequence::new(encoded)?,
        linear,
        valid,
        report,
    })
}
