//! Exact computations in a frozen environment: Dirichlet problems on finite
//! domains, n-step transition probabilities, absorbing dynamics and the
//! invariant measure of a periodized balanced field.

use nalgebra::DMatrix;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::env_model::{Environment, TransitionKernel};
use crate::error::{Result, RwreError};
use crate::lattice::{JumpSet, Site};
use crate::walk_sim::box_sites;

/// Largest system handed to the dense LU solver under `SolveMethod::Auto`.
pub const DENSE_MAX: usize = 1200;
pub const SOLVE_TOL: f64 = 1e-12;
/// Default cap on the number of lattice cells a DP may allocate.
pub const DP_CELL_CAP: usize = 50_000_000;

/// A finite set of interior sites together with its external boundary,
/// partitioned into named pieces.
#[derive(Clone, Debug)]
pub struct FiniteDomain {
    pub dim: usize,
    interior: Vec<Site>,
    index: FxHashMap<Site, usize>,
    boundary: Vec<Site>,
    boundary_index: FxHashMap<Site, usize>,
    boundary_piece: Vec<usize>,
    pieces: Vec<String>,
}

impl FiniteDomain {
    /// Build from an interior site list. `piece` names the boundary piece of
    /// every external boundary site; names are collected in order of first
    /// appearance after sorting the boundary.
    pub fn new(dim: usize, interior: Vec<Site>, piece: impl Fn(Site) -> String) -> Result<Self> {
        let jumps = JumpSet::new(dim, false)?;
        if interior.is_empty() {
            return Err(RwreError::config("domain has no interior sites"));
        }
        let mut interior = interior;
        interior.sort();
        interior.dedup();
        let index: FxHashMap<Site, usize> = interior.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut boundary: Vec<Site> = interior
            .iter()
            .flat_map(|x| (0..jumps.len()).map(move |m| *x + jumps.vector(m)))
            .filter(|y| !index.contains_key(y))
            .collect();
        boundary.sort();
        boundary.dedup();
        let mut pieces: Vec<String> = Vec::new();
        let mut boundary_piece = Vec::with_capacity(boundary.len());
        for y in &boundary {
            let name = piece(*y);
            let id = match pieces.iter().position(|p| *p == name) {
                Some(i) => i,
                None => {
                    pieces.push(name);
                    pieces.len() - 1
                }
            };
            boundary_piece.push(id);
        }
        let boundary_index = boundary.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(FiniteDomain { dim, interior, index, boundary, boundary_index, boundary_piece, pieces })
    }

    /// All sites `x` of the box `lo <= x <= hi` (componentwise) with
    /// `inside(x)`.
    pub fn from_predicate(
        dim: usize,
        lo: &[i64],
        hi: &[i64],
        inside: impl Fn(Site) -> bool,
        piece: impl Fn(Site) -> String,
    ) -> Result<Self> {
        let mut sites = vec![Site::ORIGIN];
        for a in 0..dim {
            let mut next = Vec::new();
            for s in &sites {
                for v in lo[a]..=hi[a] {
                    let mut t = *s;
                    t.0[a] = v;
                    next.push(t);
                }
            }
            sites = next;
        }
        sites.retain(|s| inside(*s));
        Self::new(dim, sites, piece)
    }

    /// The 1D interval `{a+1, ..., b-1}` with boundary pieces "left" = {a}
    /// and "right" = {b}.
    pub fn interval(a: i64, b: i64) -> Result<Self> {
        if b - a < 2 {
            return Err(RwreError::config("interval needs at least one interior site"));
        }
        let sites = (a + 1..b).map(|x| Site::new(&[x])).collect();
        Self::new(1, sites, move |y| if y.0[0] <= a { "left".into() } else { "right".into() })
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    pub fn interior(&self) -> &[Site] {
        &self.interior
    }

    pub fn boundary(&self) -> &[Site] {
        &self.boundary
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece_id(&self, name: &str) -> Result<usize> {
        self.pieces
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| RwreError::config(format!("no boundary piece named {name:?}; have {:?}", self.pieces)))
    }

    pub fn piece_of_boundary(&self, b: usize) -> usize {
        self.boundary_piece[b]
    }

    pub fn index_of(&self, x: Site) -> Option<usize> {
        self.index.get(&x).copied()
    }

    pub fn boundary_index_of(&self, x: Site) -> Option<usize> {
        self.boundary_index.get(&x).copied()
    }

    /// Largest l-infinity extent of the interior.
    pub fn diameter(&self) -> i64 {
        (0..self.dim)
            .map(|a| {
                let lo = self.interior.iter().map(|s| s.0[a]).min().unwrap_or(0);
                let hi = self.interior.iter().map(|s| s.0[a]).max().unwrap_or(0);
                hi - lo + 2
            })
            .max()
            .unwrap_or(1)
    }
}

/// Kernels frozen on the interior of a domain, stored as a flat transition
/// table: entry `i * moves + m` is the target of move `m` from site `i`
/// (interior index, or `len + boundary index`).
#[derive(Clone, Debug)]
pub struct QuenchedField {
    pub domain: Arc<FiniteDomain>,
    pub jumps: JumpSet,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl QuenchedField {
    pub fn from_env(domain: Arc<FiniteDomain>, env: &Environment) -> Self {
        Self::from_fn(domain, |x| env.kernel_at(x))
    }

    pub fn from_fn(domain: Arc<FiniteDomain>, kernel: impl Fn(Site) -> TransitionKernel) -> Self {
        let n = domain.len();
        let first = kernel(domain.interior[0]);
        let jumps = first.jumps;
        let nm = jumps.len();
        let mut targets = Vec::with_capacity(n * nm);
        let mut probs = Vec::with_capacity(n * nm);
        for (i, x) in domain.interior.iter().enumerate() {
            let k = if i == 0 { first } else { kernel(*x) };
            assert_eq!(k.jumps, jumps, "kernels on one field must share a jump set");
            for m in 0..nm {
                let y = *x + jumps.vector(m);
                let t = match domain.index_of(y) {
                    Some(j) => j,
                    None => n + domain.boundary_index_of(y).expect("neighbor of interior is interior or boundary"),
                };
                targets.push(t as u32);
                probs.push(k.prob(m));
            }
        }
        QuenchedField { domain, jumps, targets, probs }
    }

    pub fn kernel(&self, i: usize) -> TransitionKernel {
        let nm = self.jumps.len();
        TransitionKernel::new(self.jumps, &self.probs[i * nm..(i + 1) * nm]).expect("stored kernel is valid")
    }

    #[inline]
    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let nm = self.jumps.len();
        (&self.targets[i * nm..(i + 1) * nm], &self.probs[i * nm..(i + 1) * nm])
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Auto,
    DenseLu,
    /// LU without pivoting on a band ordering of the sites. `I - P` is a
    /// weakly diagonally dominant M-matrix, so no pivoting is needed.
    BandedLu,
    GaussSeidel,
}

/// Largest band storage (`n * (2 * bandwidth + 1)` entries) used by
/// `SolveMethod::Auto` before it falls back to Gauss-Seidel.
pub const BAND_CELL_CAP: usize = 30_000_000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    /// `values[k][i]`: right-hand side `k` at interior site `i`.
    pub values: Vec<Vec<f64>>,
    pub residual_inf_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Solve `u(x) = sum_m p(x, m) u(x + e_m) + source[k]` in the interior with
/// `u = boundary_data[k]` on the boundary, for each right-hand side `k`.
pub fn solve_dirichlet(
    field: &QuenchedField,
    boundary_data: &[Vec<f64>],
    source: &[f64],
    method: SolveMethod,
) -> Result<SolveReport> {
    let n = field.domain.len();
    let nb = field.domain.boundary.len();
    let k = boundary_data.len();
    assert_eq!(source.len(), k);
    assert!(boundary_data.iter().all(|g| g.len() == nb));
    // Constant part b[k][i] = sum over boundary moves p * g + source.
    let mut rhs = vec![vec![0.0; n]; k];
    for i in 0..n {
        let (t, p) = field.row(i);
        for (tt, pp) in t.iter().zip(p) {
            let tt = *tt as usize;
            if tt >= n {
                for (r, g) in rhs.iter_mut().zip(boundary_data) {
                    r[i] += pp * g[tt - n];
                }
            }
        }
        for (r, s) in rhs.iter_mut().zip(source) {
            r[i] += s;
        }
    }
    let band = matches!(method, SolveMethod::Auto | SolveMethod::BandedLu).then(|| band_order(field));
    // Auto prefers the band solver when its work n * bw^2 is below the
    // dense n^3 / 3, then dense LU, then Gauss-Seidel.
    let band_ok = band.as_ref().is_some_and(|b| n * (2 * b.1 + 1) <= BAND_CELL_CAP && 3 * b.1 * b.1 < n * n);
    let method = match method {
        SolveMethod::Auto if band_ok => SolveMethod::BandedLu,
        SolveMethod::Auto if n <= DENSE_MAX => SolveMethod::DenseLu,
        SolveMethod::Auto if band.as_ref().is_some_and(|b| n * (2 * b.1 + 1) <= BAND_CELL_CAP) => SolveMethod::BandedLu,
        SolveMethod::Auto => SolveMethod::GaussSeidel,
        m => m,
    };
    let (values, iterations) = match method {
        SolveMethod::DenseLu => (dense_solve(field, &rhs)?, 1),
        SolveMethod::BandedLu => (banded_solve(field, &rhs, band.expect("band order computed"))?, 1),
        _ => gauss_seidel(field, &rhs)?,
    };
    let residual = residual_inf(field, &values, &rhs);
    let scale = values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if !(residual <= 1e-9 * scale) {
        return Err(RwreError::Numerical { msg: "Dirichlet solve did not converge".into(), residual });
    }
    Ok(SolveReport { values, residual_inf_norm: residual, iterations, method })
}

fn residual_inf(field: &QuenchedField, u: &[Vec<f64>], rhs: &[Vec<f64>]) -> f64 {
    let n = field.domain.len();
    let mut r: f64 = 0.0;
    for (uk, bk) in u.iter().zip(rhs) {
        for i in 0..n {
            let (t, p) = field.row(i);
            let mut acc = bk[i];
            for (tt, pp) in t.iter().zip(p) {
                if (*tt as usize) < n {
                    acc += pp * uk[*tt as usize];
                }
            }
            r = r.max((acc - uk[i]).abs());
        }
    }
    r
}

fn dense_solve(field: &QuenchedField, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = field.domain.len();
    let k = rhs.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let (t, p) = field.row(i);
        for (tt, pp) in t.iter().zip(p) {
            if (*tt as usize) < n {
                a[(i, *tt as usize)] -= pp;
            }
        }
    }
    let b = DMatrix::from_fn(n, k, |i, j| rhs[j][i]);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or(RwreError::Numerical { msg: "singular Dirichlet system (walk cannot exit)".into(), residual: f64::NAN })?;
    // One step of iterative refinement.
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok((0..k).map(|j| x.column(j).iter().copied().collect()).collect())
}

/// Site permutation with the longest axis most significant, and the
/// resulting bandwidth.
fn band_order(field: &QuenchedField) -> (Vec<usize>, usize) {
    let d = &field.domain;
    let n = d.len();
    let dim = d.dim;
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for x in &d.interior {
        for a in 0..dim {
            lo[a] = lo[a].min(x.0[a]);
            hi[a] = hi[a].max(x.0[a]);
        }
    }
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.sort_by_key(|&a| std::cmp::Reverse(hi[a] - lo[a]));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| {
        let x = d.interior[i];
        [axes.first().map(|&a| x.0[a]), axes.get(1).map(|&a| x.0[a]), axes.get(2).map(|&a| x.0[a])]
    });
    // pos[i]: position of interior site i in the band ordering.
    let mut pos = vec![0usize; n];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    let mut bw = 0;
    for i in 0..n {
        let (t, _) = field.row(i);
        for &tt in t {
            if (tt as usize) < n {
                bw = bw.max(pos[i].abs_diff(pos[tt as usize]));
            }
        }
    }
    (pos, bw)
}

fn banded_solve(field: &QuenchedField, rhs: &[Vec<f64>], (pos, bw): (Vec<usize>, usize)) -> Result<Vec<Vec<f64>>> {
    let n = field.domain.len();
    let w = 2 * bw + 1;
    // Row r holds columns r - bw ..= r + bw at offsets 0..w.
    let mut a = vec![0.0f64; n * w];
    for i in 0..n {
        let r = pos[i];
        a[r * w + bw] += 1.0;
        let (t, p) = field.row(i);
        for (tt, pp) in t.iter().zip(p) {
            if (*tt as usize) < n {
                let c = pos[*tt as usize];
                a[r * w + c + bw - r] -= pp;
            }
        }
    }
    for k in 0..n {
        let piv = a[k * w + bw];
        if !(piv.abs() > 1e-300) {
            return Err(RwreError::Numerical { msg: "singular Dirichlet system (walk cannot exit)".into(), residual: f64::NAN });
        }
        let jmax = (k + bw).min(n - 1);
        for i in k + 1..=jmax {
            let lik = a[i * w + k + bw - i] / piv;
            if lik == 0.0 {
                continue;
            }
            a[i * w + k + bw - i] = lik;
            for j in k + 1..=jmax {
                a[i * w + j + bw - i] -= lik * a[k * w + j + bw - k];
            }
        }
    }
    let solve = |b: &mut [f64]| {
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= a[i * w + k + bw - i] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= a[i * w + j + bw - i] * b[j];
            }
            b[i] = s / a[i * w + bw];
        }
    };
    let mut out = Vec::with_capacity(rhs.len());
    for bk in rhs {
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[pos[i]] = bk[i];
        }
        solve(&mut b);
        let mut x: Vec<f64> = (0..n).map(|i| b[pos[i]]).collect();
        // One step of iterative refinement against the original rows.
        let mut r = vec![0.0; n];
        for i in 0..n {
            let (t, p) = field.row(i);
            let mut acc = bk[i] - x[i];
            for (tt, pp) in t.iter().zip(p) {
                if (*tt as usize) < n {
                    acc += pp * x[*tt as usize];
                }
            }
            r[pos[i]] = acc;
        }
        solve(&mut r);
        for i in 0..n {
            x[i] += r[pos[i]];
        }
        out.push(x);
    }
    Ok(out)
}

fn gauss_seidel(field: &QuenchedField, rhs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = field.domain.len();
    let diam = field.domain.diameter() as usize;
    let cap = (200 * diam * diam).max(10_000);
    let mut u: Vec<Vec<f64>> = rhs.to_vec();
    let mut it = 0;
    loop {
        it += 1;
        let mut change: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (uk, bk) in u.iter_mut().zip(rhs) {
            for i in 0..n {
                let (t, p) = field.row(i);
                let mut acc = bk[i];
                let mut diag = 0.0;
                for (tt, pp) in t.iter().zip(p) {
                    let tt = *tt as usize;
                    if tt == i {
                        diag += pp;
                    } else if tt < n {
                        acc += pp * uk[tt];
                    }
                }
                let v = acc / (1.0 - diag);
                change = change.max((v - uk[i]).abs());
                scale = scale.max(v.abs());
                uk[i] = v;
            }
        }
        if change <= SOLVE_TOL * scale.max(f64::MIN_POSITIVE) {
            let res = residual_inf(field, &u, rhs);
            if res <= SOLVE_TOL * scale.max(1e-300) * 10.0 {
                return Ok((u, it));
            }
        }
        if it >= cap {
            return Err(RwreError::Numerical {
                msg: format!("Gauss-Seidel hit the iteration cap {cap}"),
                residual: residual_inf(field, &u, rhs),
            });
        }
    }
}

/// Exit distribution over all boundary pieces, as fields over the interior.
pub fn exit_distribution(field: &QuenchedField, method: SolveMethod) -> Result<SolveReport> {
    let d = &field.domain;
    let data: Vec<Vec<f64>> = (0..d.pieces.len())
        .map(|p| d.boundary_piece.iter().map(|&b| if b == p { 1.0 } else { 0.0 }).collect())
        .collect();
    let rep = solve_dirichlet(field, &data, &vec![0.0; data.len()], method)?;
    // Maximum principle: boundary data lie in [0, 1].
    for v in rep.values.iter().flatten() {
        if !(*v >= -1e-12 && *v <= 1.0 + 1e-12) {
            return Err(RwreError::Numerical { msg: format!("maximum principle violated: value {v}"), residual: rep.residual_inf_norm });
        }
    }
    Ok(rep)
}

/// `P_{start, omega}[the walk leaves the domain through piece target]`.
pub fn exit_probability(field: &QuenchedField, target: &str, start: Site) -> Result<(f64, SolveReport)> {
    let p = field.domain.piece_id(target)?;
    let i = start_index(field, start)?;
    let rep = exit_distribution(field, SolveMethod::Auto)?;
    Ok((rep.values[p][i].clamp(0.0, 1.0), rep))
}

fn start_index(field: &QuenchedField, start: Site) -> Result<usize> {
    field
        .domain
        .index_of(start)
        .ok_or_else(|| RwreError::config(format!("start {start:?} is not an interior site")))
}

/// Expected exit time `E_{start, omega}[T]`.
pub fn expected_exit_time(field: &QuenchedField, start: Site) -> Result<(f64, SolveReport)> {
    let i = start_index(field, start)?;
    let zero = vec![0.0; field.domain.boundary.len()];
    let rep = solve_dirichlet(field, &[zero], &[1.0], SolveMethod::Auto)?;
    let v = rep.values[0][i];
    if !(v >= 1.0 - 1e-9) {
        return Err(RwreError::Numerical { msg: format!("exit time {v} below 1"), residual: rep.residual_inf_norm });
    }
    Ok((v, rep))
}

/// Front and non-front exit probabilities from `start`, each computed from
/// its own right-hand side so that small values keep relative accuracy.
pub fn front_and_rest(field: &QuenchedField, front: &str, start: Site, method: SolveMethod) -> Result<(f64, f64)> {
    let d = &field.domain;
    let p = d.piece_id(front)?;
    let i = start_index(field, start)?;
    let g_front: Vec<f64> = d.boundary_piece.iter().map(|&b| if b == p { 1.0 } else { 0.0 }).collect();
    let g_rest: Vec<f64> = g_front.iter().map(|v| 1.0 - v).collect();
    let rep = solve_dirichlet(field, &[g_front, g_rest], &[0.0, 0.0], method)?;
    Ok((rep.values[0][i].clamp(0.0, 1.0), rep.values[1][i].clamp(0.0, 1.0)))
}

/// `rho_B = P[exit not through the front] / P[exit through the front]`.
pub fn rho_b(field: &QuenchedField, front: &str, start: Site) -> Result<f64> {
    let (f, r) = front_and_rest(field, front, start, SolveMethod::Auto)?;
    if f < 1e-300 {
        return Err(RwreError::Numerical { msg: format!("front exit probability {f:e} underflows; use log_rho_b"), residual: f });
    }
    Ok(r / f)
}

/// `ln rho_B`, usable when the front probability is tiny.
pub fn log_rho_b(field: &QuenchedField, front: &str, start: Site) -> Result<f64> {
    let (f, r) = front_and_rest(field, front, start, SolveMethod::Auto)?;
    Ok(r.ln() - f.ln())
}

/// `p^{(n)}(start, .)` on the box `start + [-n, n]^d`.
#[derive(Clone, Debug)]
pub struct NStepDistribution {
    pub dim: usize,
    pub n: u64,
    pub start: Site,
    side: usize,
    probs: Vec<f64>,
}

impl NStepDistribution {
    fn offset(&self, y: Site) -> Option<usize> {
        let r = self.n as i64;
        let mut idx = 0usize;
        for a in (0..self.dim).rev() {
            let c = y.0[a] - self.start.0[a] + r;
            if c < 0 || c > 2 * r {
                return None;
            }
            idx = idx * self.side + c as usize;
        }
        Some(idx)
    }

    pub fn get(&self, y: Site) -> f64 {
        self.offset(y).map_or(0.0, |i| self.probs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Sites with positive mass.
    pub fn support(&self) -> Vec<(Site, f64)> {
        let r = self.n as i64;
        box_sites(self.dim, r)
            .into_iter()
            .map(|y| self.start + y)
            .filter_map(|y| {
                let p = self.get(y);
                (p > 0.0).then_some((y, p))
            })
            .collect()
    }
}

/// Kernels of an environment on the dense box `center + [-r, r]^d`.
pub(crate) struct DenseKernels {
    pub dim: usize,
    pub side: usize,
    pub kernels: Vec<TransitionKernel>,
}

impl DenseKernels {
    pub fn new(env: &Environment, center: Site, r: i64, cap: usize) -> Result<Self> {
        let dim = env.dim();
        let side = (2 * r + 1) as usize;
        let cells = side.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if cells > cap {
            let feasible = ((cap as f64).powf(1.0 / dim as f64) as i64 - 1) / 2;
            return Err(RwreError::Resource(format!(
                "{cells} cells exceed the cap {cap}; the largest feasible n is {feasible}"
            )));
        }
        let mut kernels = Vec::with_capacity(cells);
        for idx in 0..cells {
            kernels.push(env.kernel_at(center + Self::site_of(dim, side, r, idx)));
        }
        Ok(DenseKernels { dim, side, kernels })
    }

    #[inline]
    pub fn site_of(dim: usize, side: usize, r: i64, mut idx: usize) -> Site {
        let mut s = Site::ORIGIN;
        for a in 0..dim {
            s.0[a] = (idx % side) as i64 - r;
            idx /= side;
        }
        s
    }

    /// Index offsets of the moves of the jump set.
    pub fn strides(&self, jumps: &JumpSet) -> Vec<isize> {
        (0..jumps.len())
            .map(|m| {
                let v = jumps.vector(m);
                let mut off = 0isize;
                let mut stride = 1isize;
                for a in 0..self.dim {
                    off += v.0[a] as isize * stride;
                    stride *= self.side as isize;
                }
                off
            })
            .collect()
    }
}

/// Exact `n`-step transition probabilities from `start`, by forward
/// dynamic programming on `start + [-n, n]^d`.
pub fn nstep_probabilities(env: &Environment, start: Site, n: u64, holding: bool, cap: usize) -> Result<NStepDistribution> {
    let env = if holding && env.hold.is_none() { env.with_holding(None)? } else { env.clone() };
    let r = n as i64;
    let dk = DenseKernels::new(&env, start, r, cap)?;
    let jumps = env.jumps();
    let strides = dk.strides(&jumps);
    let cells = dk.kernels.len();
    let mut cur = vec![0.0; cells];
    let center = {
        let mut idx = 0usize;
        for _ in 0..dk.dim {
            idx = idx * dk.side + r as usize;
        }
        idx
    };
    cur[center] = 1.0;
    let mut next = vec![0.0; cells];
    for _ in 0..n {
        next.iter_mut().for_each(|v| *v = 0.0);
        // Only the l1 ball of radius t is reachable; scanning the full box
        // is simpler and stays within the cell cap.
        for idx in 0..cells {
            let mass = cur[idx];
            if mass == 0.0 {
                continue;
            }
            let k = &dk.kernels[idx];
            for (m, s) in strides.iter().enumerate() {
                let p = k.prob(m);
                if p != 0.0 {
                    next[(idx as isize + s) as usize] += mass * p;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(NStepDistribution { dim: dk.dim, n, start, side: dk.side, probs: cur })
}

/// Survival and absorption masses of the walk killed on leaving a domain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbsorbingRun {
    /// `survival[k] = P[T > k]`.
    pub survival: Vec<f64>,
    /// Cumulative absorbed mass per boundary piece after the last step.
    pub absorbed: Vec<f64>,
    pub pieces: Vec<String>,
}

/// Forward DP of the walk started at `start` and killed on exiting the
/// domain, for `steps` steps. Mass is conserved: survival + absorbed = 1.
pub fn absorbing_dp(field: &QuenchedField, start: Site, steps: usize) -> Result<AbsorbingRun> {
    let d = &field.domain;
    let n = d.len();
    let mut cur = vec![0.0; n];
    cur[start_index(field, start)?] = 1.0;
    let mut next = vec![0.0; n];
    let mut absorbed = vec![0.0; d.pieces.len()];
    let mut survival = Vec::with_capacity(steps + 1);
    survival.push(1.0);
    for _ in 0..steps {
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if cur[i] == 0.0 {
                continue;
            }
            let (t, p) = field.row(i);
            for (tt, pp) in t.iter().zip(p) {
                let tt = *tt as usize;
                if tt < n {
                    next[tt] += cur[i] * pp;
                } else {
                    absorbed[d.boundary_piece[tt - n]] += cur[i] * pp;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        survival.push(cur.iter().sum());
    }
    Ok(AbsorbingRun { survival, absorbed, pieces: d.pieces.clone() })
}

/// The two-site domain `{x, x + e}` for a move `e` of a jump set.
pub fn edge_domain(dim: usize, x: Site, e: Site) -> Result<FiniteDomain> {
    FiniteDomain::new(dim, vec![x, x + e], |_| "out".to_string())
}

/// `P_{0, omega}[T_{{0, e}} > 2k]` for `k = 0..=k_max` where `T` is the exit
/// time from the edge `{0, e}`.
pub fn edge_trap_survival(env: &Environment, e_move: usize, k_max: usize) -> Result<Vec<f64>> {
    let j = env.jumps();
    let dom = Arc::new(edge_domain(env.dim(), Site::ORIGIN, j.vector(e_move))?);
    let field = QuenchedField::from_env(dom, env);
    let run = absorbing_dp(&field, Site::ORIGIN, 2 * k_max)?;
    Ok((0..=k_max).map(|k| run.survival[2 * k]).collect())
}

/// Invariant measure of the walk on the torus `(Z / (2N+1))^d` whose kernels
/// copy the central box `[-N, N]^d` periodically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusMeasure {
    pub dim: usize,
    pub n: i64,
    /// `phi[i]` at site `DenseKernels::site_of(i)`; `sum phi = (2N+1)^d`.
    pub phi: Vec<f64>,
    pub residual_inf_norm: f64,
    pub iterations: usize,
    /// `(|B|^{-1} sum phi^p)^{1/p}` with `p = d/(d-1)` (`max` for `d = 1`).
    pub norm_d_over_d_minus_1: f64,
}

pub const TORUS_TOL: f64 = 1e-10;

pub fn torus_invariant_measure(env: &Environment, n: i64, require_balanced: bool, max_iter: usize) -> Result<TorusMeasure> {
    let dim = env.dim();
    let side = (2 * n + 1) as usize;
    let cells = side.pow(dim as u32);
    let dk = DenseKernels::new(env, Site::ORIGIN, n, DP_CELL_CAP)?;
    if require_balanced && !dk.kernels.iter().all(|k| k.is_balanced()) {
        return Err(RwreError::domain("torus invariant measure requires a balanced field"));
    }
    let jumps = env.jumps();
    // Periodic neighbor table.
    let nm = jumps.len();
    let mut nbr = vec![0usize; cells * nm];
    for idx in 0..cells {
        let x = DenseKernels::site_of(dim, side, n, idx);
        for m in 0..nm {
            let y = x + jumps.vector(m);
            let mut j = 0usize;
            for a in (0..dim).rev() {
                let c = (y.0[a] + n).rem_euclid(side as i64) as usize;
                j = j * side + c;
            }
            nbr[idx * nm + m] = j;
        }
    }
    let step = |phi: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for idx in 0..cells {
            let k = &dk.kernels[idx];
            for m in 0..nm {
                out[nbr[idx * nm + m]] += phi[idx] * k.prob(m);
            }
        }
    };
    let mut phi = vec![1.0; cells];
    let mut tmp = vec![0.0; cells];
    let mut it = 0;
    let mut residual;
    loop {
        step(&phi, &mut tmp);
        residual = phi.iter().zip(&tmp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if residual <= TORUS_TOL * 0.5 {
            break;
        }
        if it >= max_iter {
            return Err(RwreError::Numerical { msg: format!("torus power iteration stagnated after {it} steps"), residual });
        }
        // Lazy update phi <- (phi + phi P) / 2, renormalized.
        for (a, b) in phi.iter_mut().zip(&tmp) {
            *a = 0.5 * (*a + b);
        }
        let s: f64 = phi.iter().sum();
        let scale = cells as f64 / s;
        phi.iter_mut().for_each(|v| *v *= scale);
        it += 1;
    }
    let s: f64 = phi.iter().sum();
    let scale = cells as f64 / s;
    phi.iter_mut().for_each(|v| *v *= scale);
    step(&phi, &mut tmp);
    residual = phi.iter().zip(&tmp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let norm = if dim == 1 {
        phi.iter().copied().fold(0.0, f64::max)
    } else {
        let p = dim as f64 / (dim as f64 - 1.0);
        (phi.iter().map(|v| v.powf(p)).sum::<f64>() / cells as f64).powf(1.0 / p)
    };
    Ok(TorusMeasure { dim, n, phi, residual_inf_norm: residual, iterations: it, norm_d_over_d_minus_1: norm })
}

impl TorusMeasure {
    /// `(phi P)(x)` at the torus site with dense index `idx`.
    pub fn push_forward_at(&self, env: &Environment, idx: usize) -> f64 {
        let side = (2 * self.n + 1) as usize;
        let x = DenseKernels::site_of(self.dim, side, self.n, idx);
        let jumps = env.jumps();
        let wrap = |y: Site| {
            let mut s = Site::ORIGIN;
            for a in 0..self.dim {
                s.0[a] = (y.0[a] + self.n).rem_euclid(side as i64) - self.n;
            }
            s
        };
        let index = |y: Site| {
            let mut j = 0usize;
            for a in (0..self.dim).rev() {
                j = j * side + (y.0[a] + self.n) as usize;
            }
            j
        };
        (0..jumps.len())
            .map(|m| {
                // Predecessor z with z + e_m = x.
                let z = wrap(x - jumps.vector(m));
                self.phi[index(z)] * env.kernel_at(z).prob(m)
            })
            .sum()
    }
}
