//! Built-in operator families: stair graphs of coupled wires, the rooted
//! binary tree, strips, each with optional independent random decaying
//! shell-matrix potentials; the mean-field reduction of the tree to a stair;
//! and the conjugated transfer recursion driving the fourth-moment Monte
//! Carlo harness.

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{ChannelData, ShellOperator};
use crate::numerics::{c64, lu_solve, spectral_norm, C64, CMatrix, CVector};
use crate::sampling::{complex_gaussian_matrix, derived_seed, seeded_rng};

/// Band margin required of Monte Carlo parameters: every wire must stay at
/// least this far from its band edges.
pub const MC_BAND_MARGIN: f64 = 0.05;

/// Width cap guarding dense shell algebra in Monte Carlo runs.
pub const MC_DEFAULT_WIDTH_CAP: usize = 8;

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WidthRule {
    /// s_n = min(n + 1, cap).
    MinLinear { cap: usize },
    /// s_n = 2^n, optionally capped.
    Pow2 {
        #[serde(default)]
        cap: Option<usize>,
    },
    /// s_n = s.
    Constant { s: usize },
}

impl WidthRule {
    pub fn width(&self, n: usize) -> usize {
        match *self {
            WidthRule::MinLinear { cap } => (n + 1).min(cap.max(1)),
            WidthRule::Pow2 { cap } => {
                let raw = 1usize << n.min(62);
                match cap {
                    Some(c) => raw.min(c.max(1)),
                    None => raw,
                }
            }
            WidthRule::Constant { s } => s.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    GaussHerm,
    DiagIid,
    None,
}

fn default_exponent() -> f64 {
    1.0
}

/// Random shell-matrix potential: V_n = c_n X_n with c_n = c0 / n^exponent
/// (c_0 = c0) and X_n normalized so its expected operator norm is about one
/// regardless of the shell width.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct PotentialSpec {
    pub dist: PotentialKind,
    pub c0: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

impl PotentialSpec {
    pub fn scale_at(&self, n: usize) -> f64 {
        if n == 0 {
            self.c0
        } else {
            self.c0 / (n as f64).powf(self.exponent)
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stair,
    Tree,
    Strip,
}

/// Declarative description of a built-in model. `depth` is the largest n
/// for which boundary data R_{0,n} will be requested; the generator emits
/// one extra shell so the forward channels at `depth` exist.
#[derive(Debug, Clone, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub widths: Option<WidthRule>,
    /// Wire mean energies (stair) or cross-section diagonal (strip).
    #[serde(default)]
    pub a: Vec<f64>,
    /// Nearest-neighbor hopping inside a strip cross-section.
    #[serde(default)]
    pub coupling: f64,
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    pub seed: u64,
    pub depth: usize,
}

impl ModelSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::SpecInvalid(format!("model JSON: {e}")))
    }

    pub fn widths_rule(&self) -> WidthRule {
        match self.kind {
            ModelKind::Tree => WidthRule::Pow2 { cap: None },
            ModelKind::Strip => WidthRule::Constant { s: self.a.len().max(1) },
            ModelKind::Stair => self.widths.unwrap_or(WidthRule::Constant { s: 1 }),
        }
    }

    /// Validate the spec; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let rule = self.widths_rule();
        let mut prev = 0usize;
        let mut max_width = 0usize;
        for n in 0..=self.depth + 1 {
            let w = rule.width(n);
            if w < prev {
                return Err(Error::SpecInvalid(format!(
                    "widths must be non-decreasing, got s_{n} = {w} after {prev}"
                )));
            }
            prev = w;
            max_width = max_width.max(w);
        }
        match self.kind {
            ModelKind::Stair => {
                if !self.a.is_empty() {
                    if self.a.len() < max_width {
                        return Err(Error::SpecInvalid(format!(
                            "stair needs a mean energy per wire: {} wires, {} entries",
                            max_width,
                            self.a.len()
                        )));
                    }
                    let sup = self.a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let inf = self.a.iter().cloned().fold(f64::INFINITY, f64::min);
                    if sup - inf >= 4.0 {
                        return Err(Error::SpecInvalid(format!(
                            "wire means must satisfy sup - inf < 4, got {}",
                            sup - inf
                        )));
                    }
                }
            }
            ModelKind::Tree => {
                if self.depth > 16 {
                    return Err(Error::SpecInvalid(
                        "tree shells grow as 2^n; depth is limited to 16".into(),
                    ));
                }
            }
            ModelKind::Strip => {
                if self.a.is_empty() {
                    return Err(Error::SpecInvalid(
                        "strip needs the cross-section diagonal `a`".into(),
                    ));
                }
            }
        }
        if let Some(p) = &self.potential {
            if p.c0 < 0.0 {
                return Err(Error::SpecInvalid("potential scale c0 must be >= 0".into()));
            }
            if p.exponent <= 0.5 && p.c0 > 0.0 && !matches!(p.dist, PotentialKind::None) {
                warnings.push(format!(
                    "potential decay exponent {} <= 1/2: the squared scales are not summable",
                    p.exponent
                ));
            }
        }
        Ok(warnings)
    }

    /// Common band (-2 + max level, 2 + min level) of all wires; for strips
    /// the eigenvalues of the cross-section matrix take the role of the
    /// wire means. Empty when the levels spread by four or more.
    pub fn band_intersection(&self) -> Option<(f64, f64)> {
        let levels = match self.kind {
            ModelKind::Strip => {
                let a = cross_section(&self.a, self.coupling);
                crate::numerics::hermitian_eigenvalues(&a).iter().copied().collect::<Vec<_>>()
            }
            _ => {
                if self.a.is_empty() {
                    vec![0.0]
                } else {
                    self.a.clone()
                }
            }
        };
        let lo = -2.0 + levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let hi = 2.0 + levels.iter().cloned().fold(f64::INFINITY, f64::min);
        (lo < hi).then_some((lo, hi))
    }
}

fn cross_section(a: &[f64], coupling: f64) -> CMatrix {
    let s = a.len().max(1);
    let mut m = CMatrix::zeros(s, s);
    for (j, &aj) in a.iter().enumerate() {
        m[(j, j)] = c64(aj, 0.0);
    }
    for j in 0..s.saturating_sub(1) {
        m[(j, j + 1)] = c64(coupling, 0.0);
        m[(j + 1, j)] = c64(coupling, 0.0);
    }
    m
}

/// Hermitian random matrix with expected operator norm about `scale`.
pub fn gauss_hermitian(rng: &mut impl rand::Rng, s: usize, scale: f64) -> CMatrix {
    let g = complex_gaussian_matrix(rng, s, s);
    let h = &g + g.adjoint();
    h.scale(scale / (2.0 * (2.0 * s as f64).sqrt()))
}

fn diag_iid(rng: &mut impl rand::Rng, s: usize, scale: f64) -> CMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut m = CMatrix::zeros(s, s);
    for j in 0..s {
        let x: f64 = StandardNormal.sample(rng);
        m[(j, j)] = c64(scale * x, 0.0);
    }
    m
}

/// Draw the random part of V_n; the stream is derived from the master seed
/// and the shell index, so shell n is identical no matter how deep the
/// truncation goes.
fn draw_potential(spec: &ModelSpec, n: usize, s: usize) -> CMatrix {
    match &spec.potential {
        None => CMatrix::zeros(s, s),
        Some(p) => {
            let scale = p.scale_at(n);
            if scale == 0.0 || matches!(p.dist, PotentialKind::None) {
                return CMatrix::zeros(s, s);
            }
            let mut rng = seeded_rng(derived_seed(spec.seed, n as u64));
            match p.dist {
                PotentialKind::GaussHerm => gauss_hermitian(&mut rng, s, scale),
                PotentialKind::DiagIid => diag_iid(&mut rng, s, scale),
                PotentialKind::None => CMatrix::zeros(s, s),
            }
        }
    }
}

/// Assemble the shell operator and exact channel data of a built-in model.
/// Shells run to depth + 1 so that boundary data exists up to `depth`.
pub fn build_model(spec: &ModelSpec) -> Result<(ShellOperator, ChannelData)> {
    spec.validate()?;
    let rule = spec.widths_rule();
    let top = spec.depth + 1;
    let mut potentials = Vec::with_capacity(top + 1);
    let mut connections = Vec::with_capacity(top);
    let mut upsilon: Vec<CMatrix> = Vec::with_capacity(top + 1);
    let mut phi: Vec<CMatrix> = Vec::with_capacity(top);
    let mut ranks = vec![1usize];

    for n in 0..=top {
        let s = rule.width(n);
        let base = match spec.kind {
            ModelKind::Stair => {
                let mut m = CMatrix::zeros(s, s);
                for j in 0..s {
                    let aj = if spec.a.is_empty() { 0.0 } else { spec.a[j] };
                    m[(j, j)] = c64(aj, 0.0);
                }
                m
            }
            ModelKind::Tree => CMatrix::zeros(s, s),
            ModelKind::Strip => cross_section(&spec.a, spec.coupling),
        };
        potentials.push(base + draw_potential(spec, n, s));
        if n == 0 {
            let mut root = CMatrix::zeros(s, 1);
            root[(0, 0)] = c64(1.0, 0.0);
            upsilon.push(root);
            continue;
        }
        let s_prev = rule.width(n - 1);
        let (w, ups, ph, r) = match spec.kind {
            ModelKind::Stair | ModelKind::Strip => {
                // shared wires carry -1, newly started wires have zero rows
                let mut w = CMatrix::zeros(s, s_prev);
                for j in 0..s_prev {
                    w[(j, j)] = c64(-1.0, 0.0);
                }
                let mut ups = CMatrix::zeros(s, s_prev);
                for j in 0..s_prev {
                    ups[(j, j)] = c64(1.0, 0.0);
                }
                (w, ups, CMatrix::identity(s_prev, s_prev), s_prev)
            }
            ModelKind::Tree => {
                // parent j feeds children 2j and 2j + 1
                let mut w = CMatrix::zeros(s, s_prev);
                for j in 0..s_prev {
                    w[(2 * j, j)] = c64(-1.0, 0.0);
                    w[(2 * j + 1, j)] = c64(-1.0, 0.0);
                }
                let ups = -w.clone();
                (w, ups, CMatrix::identity(s_prev, s_prev), s_prev)
            }
        };
        connections.push(w);
        upsilon.push(ups);
        phi.push(ph);
        ranks.push(r);
    }

    let so = ShellOperator::new(potentials, connections)?;
    Ok((so, ChannelData { upsilon, phi, ranks }))
}

/// Per-shell summability terms |E V_n| + E|V_n|^2 + E|V_n|^4, estimated
/// over fresh potential draws; the diagnostic proxy for potential decay.
pub fn potential_summability(spec: &ModelSpec, samples: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let rule = spec.widths_rule();
    let mut terms = Vec::with_capacity(spec.depth + 2);
    for n in 0..=spec.depth + 1 {
        let s = rule.width(n);
        let mut mean = CMatrix::zeros(s, s);
        let mut m2 = 0.0;
        let mut m4 = 0.0;
        for t in 0..samples {
            let mut sample_spec = spec.clone();
            sample_spec.seed = derived_seed(spec.seed, 0x5eed ^ t as u64);
            let v = draw_potential(&sample_spec, n, s);
            let norm = spectral_norm(&v);
            mean += &v;
            m2 += norm * norm;
            m4 += norm.powi(4);
        }
        let k = samples as f64;
        terms.push(spectral_norm(&mean.scale(1.0 / k)) + m2 / k + m4 / k);
    }
    Ok(terms)
}

/// Orthonormal mean-field basis of the n-th tree generation: the constant
/// column followed by sign wavelets at every dyadic scale and offset.
pub fn mean_field_unitary(n: usize) -> DMatrix<f64> {
    let size = 1usize << n;
    let mut u = DMatrix::zeros(size, size);
    let norm = 1.0 / (size as f64).sqrt();
    for row in 0..size {
        u[(row, 0)] = norm;
    }
    let mut col = 1;
    // scale-2^k wavelets, largest first, at offsets j 2^k
    for k in (1..=n).rev() {
        let block = 1usize << k;
        let half = block >> 1;
        let amp = 1.0 / (block as f64).sqrt();
        for offset in (0..size).step_by(block) {
            for row in 0..half {
                u[(offset + row, col)] = amp;
                u[(offset + half + row, col)] = -amp;
            }
            col += 1;
        }
    }
    debug_assert_eq!(col, size);
    u
}

/// Dense negative adjacency of the binary tree over generations 0..=depth.
pub fn tree_adjacency_dense(depth: usize) -> DMatrix<f64> {
    let shell_offsets: Vec<usize> = (0..=depth + 1).map(|n| (1usize << n) - 1).collect();
    let total = shell_offsets[depth + 1];
    let mut m = DMatrix::zeros(total, total);
    for n in 0..depth {
        let s = 1usize << n;
        for j in 0..s {
            let parent = shell_offsets[n] + j;
            for child_bit in 0..2 {
                let child = shell_offsets[n + 1] + 2 * j + child_bit;
                m[(parent, child)] = -1.0;
                m[(child, parent)] = -1.0;
            }
        }
    }
    m
}

/// Dense free stair with widths 2^n: wires hop with -1 and wire j starts at
/// the first generation wide enough to hold it.
pub fn stair_pow2_free_dense(depth: usize) -> DMatrix<f64> {
    let shell_offsets: Vec<usize> = (0..=depth + 1).map(|n| (1usize << n) - 1).collect();
    let total = shell_offsets[depth + 1];
    let mut m = DMatrix::zeros(total, total);
    for n in 0..depth {
        let s = 1usize << n;
        for j in 0..s {
            let here = shell_offsets[n] + j;
            let next = shell_offsets[n + 1] + j;
            m[(here, next)] = -1.0;
            m[(next, here)] = -1.0;
        }
    }
    m
}

#[derive(Debug, Clone, Copy)]
pub struct TreeReduction {
    /// Conjugation residual with the outermost generation excluded.
    pub interior_residual: f64,
    /// Residual over the whole truncation. Generation-diagonal conjugation
    /// commutes with truncation, so this is as small as the interior one:
    /// matched truncations agree exactly.
    pub full_residual: f64,
}

/// Verify that the mean-field basis block-diagonalizes the tree adjacency
/// into sqrt(2) times the free pow2 stair on the matched truncation.
pub fn tree_reduction_check(depth: usize) -> TreeReduction {
    let tree = tree_adjacency_dense(depth);
    let stair = stair_pow2_free_dense(depth);
    let total = tree.nrows();
    let mut u = DMatrix::zeros(total, total);
    let mut offset = 0;
    for n in 0..=depth {
        let s = 1usize << n;
        u.view_mut((offset, offset), (s, s)).copy_from(&mean_field_unitary(n));
        offset += s;
    }
    let conj = u.transpose() * tree * &u;
    let diff = conj - stair.scale(std::f64::consts::SQRT_2);
    let interior = total - (1usize << depth);
    TreeReduction {
        interior_residual: diff.view((0, 0), (interior, interior)).norm(),
        full_residual: diff.norm(),
    }
}

/// One step of the conjugated transfer recursion inside the common band.
#[derive(Debug, Clone)]
pub struct ConjugatedStep {
    /// The isometric free part: block diag(e^{iK} Ups, e^{-iK} Ups).
    pub isometry: CMatrix,
    /// Conjugated potential block Q_cur^{-1} [V Ups, 0; 0, 0] Q_prev.
    pub potential: CMatrix,
    /// Condition number of the wave-basis change at the current width.
    pub q_cond: f64,
}

fn wave_basis(a: &[f64], lambda: f64, s: usize, margin_min: f64) -> Result<(CMatrix, CMatrix)> {
    // e^{iK} with 2 cos K = A - lambda, every wire strictly inside its band
    let mut e = CMatrix::zeros(s, s);
    for j in 0..s {
        let aj = if a.is_empty() { 0.0 } else { a[j] };
        if 2.0 - (aj - lambda).abs() < margin_min {
            return Err(Error::OutsideBand {
                lambda,
                margin: margin_min,
            });
        }
        let x = (aj - lambda) / 2.0;
        e[(j, j)] = c64(x, (1.0 - x * x).sqrt());
    }
    let mut q = CMatrix::zeros(2 * s, 2 * s);
    q.view_mut((0, 0), (s, s)).copy_from(&e);
    q.view_mut((0, s), (s, s)).copy_from(&e.map(|v| v.conj()));
    q.view_mut((s, 0), (s, s)).copy_from(&CMatrix::identity(s, s));
    q.view_mut((s, s), (s, s)).copy_from(&CMatrix::identity(s, s));
    Ok((e, q))
}

/// Conjugate one shell step: the free transfer matrix becomes an isometry
/// in the wave basis and the random potential a small additive block.
pub fn conjugated_step(
    a: &[f64],
    lambda: f64,
    s_prev: usize,
    s_cur: usize,
    v: &CMatrix,
    margin_min: f64,
) -> Result<ConjugatedStep> {
    if s_cur < s_prev {
        return Err(Error::SpecInvalid("widths must be non-decreasing".into()));
    }
    if v.nrows() != s_cur || v.ncols() != s_cur {
        return Err(Error::DimensionMismatch(format!(
            "potential must be {s_cur}x{s_cur}, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let (e_cur, q_cur) = wave_basis(a, lambda, s_cur, margin_min)?;
    let (_, q_prev) = wave_basis(a, lambda, s_prev, margin_min)?;
    // embedding of the previous wires into the current width
    let mut ups = CMatrix::zeros(s_cur, s_prev);
    for j in 0..s_prev {
        ups[(j, j)] = c64(1.0, 0.0);
    }
    let mut isometry = CMatrix::zeros(2 * s_cur, 2 * s_prev);
    isometry
        .view_mut((0, 0), (s_cur, s_prev))
        .copy_from(&(&e_cur * &ups));
    isometry
        .view_mut((s_cur, s_prev), (s_cur, s_prev))
        .copy_from(&(e_cur.map(|x| x.conj()) * &ups));

    let mut middle = CMatrix::zeros(2 * s_cur, 2 * s_prev);
    middle.view_mut((0, 0), (s_cur, s_prev)).copy_from(&(v * &ups));
    let solved = lu_solve(&q_cur, &(middle * &q_prev)).ok_or(Error::OutsideBand {
        lambda,
        margin: margin_min,
    })?;
    Ok(ConjugatedStep {
        isometry,
        potential: solved,
        q_cond: crate::numerics::cond_number(&q_cur),
    })
}

/// Fourth-moment Monte Carlo estimates over a parameter grid.
#[derive(Debug, Clone)]
pub struct McResult {
    pub lambdas: Vec<f64>,
    pub depths: Vec<usize>,
    /// fourth_moment[i][j]: E|u_n|^4 at lambdas[i], depths[j].
    pub fourth_moment: Vec<Vec<f64>>,
    /// Jackknife standard errors of the estimates.
    pub stderr: Vec<Vec<f64>>,
    /// Running product of the per-step bound factors at the same depths.
    pub bound_product: Vec<Vec<f64>>,
    pub trials: usize,
}

fn jackknife_se(values: &[f64]) -> f64 {
    let t = values.len();
    if t < 2 {
        return 0.0;
    }
    let sum: f64 = values.iter().sum();
    let mean_all = sum / t as f64;
    let mut acc = 0.0;
    for &v in values {
        let loo = (sum - v) / (t as f64 - 1.0);
        acc += (loo - mean_all) * (loo - mean_all);
    }
    ((t as f64 - 1.0) / t as f64 * acc).sqrt()
}

/// Iterate u_n = (R_n + V_n) u_{n-1} across independent potential draws and
/// aggregate E|u_n|^4 with jackknife errors plus the empirical per-step
/// bound product. Trials are reduced in index order, so the result is
/// byte-stable for a given seed regardless of worker count.
pub fn fourth_moment_run(
    spec: &ModelSpec,
    lambdas: &[f64],
    depths: &[usize],
    trials: usize,
    start: (C64, C64),
) -> Result<McResult> {
    spec.validate()?;
    if trials < 2 {
        return Err(Error::SpecInvalid("fourth-moment runs need at least 2 trials".into()));
    }
    if matches!(spec.kind, ModelKind::Tree) {
        return Err(Error::SpecInvalid(
            "fourth-moment runs drive wire models; reduce the tree to its pow2 stair first".into(),
        ));
    }
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    if depths.is_empty() || depths.iter().any(|&d| d > spec.depth || d == 0) {
        return Err(Error::SpecInvalid("requested depths must lie in 1..=depth".into()));
    }
    let rule = spec.widths_rule();
    let max_depth = *depths.last().unwrap();
    let a = if matches!(spec.kind, ModelKind::Strip) && spec.coupling != 0.0 {
        // diagonalize the cross-section; the potential distributions used
        // here are invariant in law under the basis change
        let cs = cross_section(&spec.a, spec.coupling);
        crate::numerics::hermitian_eigenvalues(&cs).iter().copied().collect::<Vec<_>>()
    } else {
        spec.a.clone()
    };

    let per_lambda = crate::parallel::map_indexed(lambdas.len(), |li| {
        let lambda = lambdas[li];
        let mut traj: Vec<Vec<f64>> = Vec::with_capacity(trials);
        let mut sum_v: Vec<CMatrix> = (1..=max_depth)
            .map(|n| CMatrix::zeros(2 * rule.width(n), 2 * rule.width(n - 1)))
            .collect();
        let mut sum_pow = vec![(0.0f64, 0.0f64, 0.0f64); max_depth];
        for trial in 0..trials {
            let mut rng = seeded_rng(derived_seed(spec.seed, trial as u64));
            let s0 = rule.width(0);
            let mut u = CVector::zeros(2 * s0);
            u[0] = start.0;
            u[s0] = start.1;
            let mut row = Vec::with_capacity(depths.len());
            let mut di = 0;
            for n in 1..=max_depth {
                let (sp, sc) = (rule.width(n - 1), rule.width(n));
                let vr = match &spec.potential {
                    Some(p) => {
                        let scale = p.scale_at(n);
                        match p.dist {
                            PotentialKind::GaussHerm => gauss_hermitian(&mut rng, sc, scale),
                            PotentialKind::DiagIid => diag_iid(&mut rng, sc, scale),
                            PotentialKind::None => CMatrix::zeros(sc, sc),
                        }
                    }
                    None => CMatrix::zeros(sc, sc),
                };
                let step = conjugated_step(&a, lambda, sp, sc, &vr, MC_BAND_MARGIN)?;
                u = &step.isometry * &u + &step.potential * &u;
                let vnorm = spectral_norm(&step.potential);
                sum_v[n - 1] += &step.potential;
                sum_pow[n - 1].0 += vnorm * vnorm;
                sum_pow[n - 1].1 += vnorm * vnorm * vnorm;
                sum_pow[n - 1].2 += vnorm * vnorm * vnorm * vnorm;
                if di < depths.len() && depths[di] == n {
                    row.push(u.norm_squared() * u.norm_squared());
                    di += 1;
                }
            }
            traj.push(row);
        }
        // empirical bound factors b_n and their running product
        let tf = trials as f64;
        let mut product = 1.0;
        let mut bound_at = Vec::with_capacity(depths.len());
        let mut di = 0;
        for n in 1..=max_depth {
            let mean_v_norm = spectral_norm(&sum_v[n - 1].scale(1.0 / tf));
            let (m2, m3, m4) = sum_pow[n - 1];
            let b = 1.0 + 4.0 * mean_v_norm + (6.0 * m2 + 4.0 * m3 + m4) / tf;
            product *= b;
            if di < depths.len() && depths[di] == n {
                bound_at.push(product);
                di += 1;
            }
        }
        let mut means = Vec::with_capacity(depths.len());
        let mut errs = Vec::with_capacity(depths.len());
        for j in 0..depths.len() {
            let vals: Vec<f64> = traj.iter().map(|row| row[j]).collect();
            means.push(vals.iter().sum::<f64>() / tf);
            errs.push(jackknife_se(&vals));
        }
        Ok::<_, Error>((means, errs, bound_at))
    });

    let mut fourth_moment = Vec::with_capacity(lambdas.len());
    let mut stderr = Vec::with_capacity(lambdas.len());
    let mut bound_product = Vec::with_capacity(lambdas.len());
    for item in per_lambda {
        let (m, e, b) = item?;
        fourth_moment.push(m);
        stderr.push(e);
        bound_product.push(b);
    }
    Ok(McResult {
        lambdas: lambdas.to_vec(),
        depths,
        fourth_moment,
        stderr,
        bound_product,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TolerancePolicy;

    fn stair_spec(depth: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Stair,
            widths: Some(WidthRule::MinLinear { cap: 3 }),
            a: vec![0.0; 3],
            coupling: 0.0,
            potential: None,
            seed: 42,
            depth,
        }
    }

    #[test]
    fn stair_assembly_matches_hand_construction() {
        let (so, cd) = build_model(&stair_spec(3)).unwrap();
        // W_1 = -(1; 0), W_2 = -[[1,0],[0,1],[0,0]], ranks 1, 2, 3
        assert_eq!(so.connections[0].nrows(), 2);
        assert!((so.connections[0][(0, 0)] - c64(-1.0, 0.0)).norm() < 1e-15);
        assert!(so.connections[0][(1, 0)].norm() < 1e-15);
        let w2 = &so.connections[1];
        assert_eq!((w2.nrows(), w2.ncols()), (3, 2));
        assert!((w2[(0, 0)] - c64(-1.0, 0.0)).norm() < 1e-15);
        assert!((w2[(1, 1)] - c64(-1.0, 0.0)).norm() < 1e-15);
        assert!(w2[(2, 0)].norm() < 1e-15 && w2[(2, 1)].norm() < 1e-15);
        assert_eq!(&cd.ranks[1..4], &[1, 2, 3]);
        for (n, w) in so.connections.iter().enumerate() {
            let resid = (w + &cd.upsilon[n + 1] * cd.phi[n].adjoint()).norm();
            assert!(resid < 1e-14, "shell {n}");
        }
    }

    #[test]
    fn tree_assembly_children_pattern() {
        let spec = ModelSpec {
            kind: ModelKind::Tree,
            widths: None,
            a: vec![],
            coupling: 0.0,
            potential: None,
            seed: 1,
            depth: 3,
        };
        let (so, cd) = build_model(&spec).unwrap();
        assert_eq!(so.sizes()[..4], [1, 2, 4, 8]);
        for (n, w) in so.connections.iter().enumerate() {
            // each column carries one -1 per child
            for j in 0..w.ncols() {
                let col_sum: f64 = (0..w.nrows()).map(|i| w[(i, j)].norm()).sum();
                assert!((col_sum - 2.0).abs() < 1e-15, "shell {n}");
            }
            let resid = (w + &cd.upsilon[n + 1] * cd.phi[n].adjoint()).norm();
            assert!(resid < 1e-14);
        }
    }

    #[test]
    fn strip_bands_and_intersection() {
        let spec = ModelSpec {
            kind: ModelKind::Strip,
            widths: None,
            a: vec![0.0, 0.0],
            coupling: -1.0,
            potential: None,
            seed: 7,
            depth: 4,
        };
        let (so, _) = build_model(&spec).unwrap();
        assert!((so.potentials[0][(0, 1)] - c64(-1.0, 0.0)).norm() < 1e-15);
        // eigenvalues of the cross-section are -1 and 1, so the common band
        // is (-1, 1)
        let (lo, hi) = spec.band_intersection().unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn potential_draws_stable_under_depth_extension() {
        let mut spec = stair_spec(6);
        spec.potential = Some(PotentialSpec {
            dist: PotentialKind::GaussHerm,
            c0: 0.3,
            exponent: 1.0,
        });
        let (so6, _) = build_model(&spec).unwrap();
        spec.depth = 12;
        let (so12, _) = build_model(&spec).unwrap();
        for n in 0..=7 {
            assert!(
                (&so6.potentials[n] - &so12.potentials[n]).norm() < 1e-15,
                "shell {n}"
            );
        }
    }

    #[test]
    fn summability_proxy_decays_for_decaying_potential() {
        let mut spec = stair_spec(40);
        spec.potential = Some(PotentialSpec {
            dist: PotentialKind::GaussHerm,
            c0: 0.3,
            exponent: 1.0,
        });
        let terms = potential_summability(&spec, 4).unwrap();
        let head: f64 = terms[1..21].iter().sum();
        let tail: f64 = terms[21..].iter().sum();
        assert!(tail < head, "head {head}, tail {tail}");
    }

    #[test]
    fn mean_field_unitary_small_cases() {
        let u0 = mean_field_unitary(0);
        assert_eq!(u0.nrows(), 1);
        assert!((u0[(0, 0)] - 1.0).abs() < 1e-15);

        let u1 = mean_field_unitary(1);
        let h = 1.0 / 2.0f64.sqrt();
        for (r, c, v) in [(0, 0, h), (1, 0, h), (0, 1, h), (1, 1, -h)] {
            assert!((u1[(r, c)] - v).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_field_unitary_is_unitary() {
        for n in [3, 8] {
            let u = mean_field_unitary(n);
            let gram = u.transpose() * &u;
            let size = 1usize << n;
            assert!(
                (gram - DMatrix::<f64>::identity(size, size)).norm() < 1e-12,
                "n = {n}"
            );
        }
    }

    #[test]
    fn tree_reduction_small_depths() {
        let r2 = tree_reduction_check(2);
        assert!(r2.interior_residual < 1e-12, "{}", r2.interior_residual);
        let r5 = tree_reduction_check(5);
        assert!(r5.interior_residual < 1e-10, "{}", r5.interior_residual);
        // conjugation is generation-diagonal, so truncation commutes with it
        // and the identity holds on the whole matched truncation
        assert!(r5.full_residual < 1e-10, "{}", r5.full_residual);
    }

    #[test]
    fn conjugated_step_quarter_band() {
        // a = 0, lambda = 0 puts every wire at K = pi/2, e^{iK} = i
        let step =
            conjugated_step(&[0.0, 0.0], 0.0, 2, 2, &CMatrix::zeros(2, 2), MC_BAND_MARGIN).unwrap();
        for j in 0..2 {
            assert!((step.isometry[(j, j)] - c64(0.0, 1.0)).norm() < 1e-14);
            assert!((step.isometry[(2 + j, 2 + j)] - c64(0.0, -1.0)).norm() < 1e-14);
        }
        assert!(step.potential.norm() < 1e-14);
    }

    #[test]
    fn conjugated_step_is_isometry() {
        use rand::Rng;
        let mut rng = seeded_rng(9);
        for _ in 0..20 {
            let sp = rng.random_range(1..5);
            let sc = rng.random_range(sp..6);
            let a: Vec<f64> = (0..sc.max(sp)).map(|_| rng.random_range(-0.5..0.5)).collect();
            let lambda = rng.random_range(-1.0..1.0);
            let step =
                conjugated_step(&a, lambda, sp, sc, &CMatrix::zeros(sc, sc), MC_BAND_MARGIN)
                    .unwrap();
            let u = complex_gaussian_matrix(&mut rng, 2 * sp, 1);
            let v = &step.isometry * &u;
            assert!((v.norm() - u.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugated_step_rejects_band_edge() {
        let err = conjugated_step(&[0.0], 1.99, 1, 1, &CMatrix::zeros(1, 1), MC_BAND_MARGIN);
        assert!(matches!(err, Err(Error::OutsideBand { .. })));
    }

    #[test]
    fn fourth_moment_constant_without_potential() {
        let spec = ModelSpec {
            kind: ModelKind::Stair,
            widths: Some(WidthRule::MinLinear { cap: 4 }),
            a: vec![0.0; 4],
            coupling: 0.0,
            potential: None,
            seed: 3,
            depth: 30,
        };
        let res =
            fourth_moment_run(&spec, &[0.0, 0.7], &[10, 30], 4, (c64(1.0, 0.0), c64(0.0, 0.0)))
                .unwrap();
        for row in &res.fourth_moment {
            for &v in row {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        for row in &res.bound_product {
            for &b in row {
                assert!((b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fourth_moment_deterministic_for_seed() {
        let mut spec = stair_spec(20);
        spec.potential = Some(PotentialSpec {
            dist: PotentialKind::GaussHerm,
            c0: 0.4,
            exponent: 1.0,
        });
        let a =
            fourth_moment_run(&spec, &[0.3], &[5, 20], 6, (c64(1.0, 0.0), c64(0.0, 0.0))).unwrap();
        let b =
            fourth_moment_run(&spec, &[0.3], &[5, 20], 6, (c64(1.0, 0.0), c64(0.0, 0.0))).unwrap();
        assert_eq!(a.fourth_moment, b.fourth_moment);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn fourth_moment_respects_bound_product() {
        let mut spec = stair_spec(60);
        spec.potential = Some(PotentialSpec {
            dist: PotentialKind::GaussHerm,
            c0: 0.35,
            exponent: 1.0,
        });
        let depths = vec![10, 30, 60];
        let res =
            fourth_moment_run(&spec, &[0.2], &depths, 16, (c64(1.0, 0.0), c64(0.0, 0.0))).unwrap();
        for (j, d) in depths.iter().enumerate() {
            let m = res.fourth_moment[0][j];
            let b = res.bound_product[0][j];
            let se = res.stderr[0][j];
            assert!(m <= b + 2.0 * se + 1e-9, "depth {d}: {m} > {b} + 2 * {se}");
        }
    }

    #[test]
    fn per_step_ratio_respects_bound_factor() {
        let mut spec = stair_spec(30);
        spec.widths = Some(WidthRule::MinLinear { cap: 4 });
        spec.a = vec![0.0; 4];
        spec.potential = Some(PotentialSpec {
            dist: PotentialKind::GaussHerm,
            c0: 0.35,
            exponent: 1.0,
        });
        let depths: Vec<usize> = (1..=30).collect();
        let res =
            fourth_moment_run(&spec, &[0.25], &depths, 32, (c64(1.0, 0.0), c64(0.0, 0.0))).unwrap();
        let m = &res.fourth_moment[0];
        let se = &res.stderr[0];
        let b = &res.bound_product[0];
        for j in 1..depths.len() {
            let step_bound = b[j] / b[j - 1];
            let ratio = m[j] / m[j - 1];
            let rel = 2.0 * (se[j] / m[j] + se[j - 1] / m[j - 1]);
            assert!(
                ratio <= step_bound * (1.0 + rel) + 1e-9,
                "step {}: ratio {ratio} > bound {step_bound} (slack {rel})",
                depths[j]
            );
        }
        // centered potentials only grow the fourth moment in expectation
        for j in 0..depths.len() {
            assert!(m[j] >= 1.0 - 3.0 * se[j] - 1e-9, "depth {}: {} below start", depths[j], m[j]);
        }
    }

    #[test]
    fn model_spec_json_round_trip() {
        let s = r#"{"kind": "stair", "widths": {"rule": "min_linear", "cap": 8},
                    "a": [0,0,0,0,0,0,0,0],
                    "potential": {"dist": "gauss_herm", "c0": 0.3, "exponent": 1.0},
                    "seed": 42, "depth": 400}"#;
        let spec = ModelSpec::from_json(s).unwrap();
        assert_eq!(spec.depth, 400);
        assert!(matches!(spec.widths, Some(WidthRule::MinLinear { cap: 8 })));
        assert!(spec.validate().unwrap().is_empty());

        let warn = ModelSpec {
            potential: Some(PotentialSpec {
                dist: PotentialKind::GaussHerm,
                c0: 0.3,
                exponent: 0.4,
            }),
            ..stair_spec(4)
        };
        assert_eq!(warn.validate().unwrap().len(), 1);
    }

    #[test]
    fn spec_rejects_wide_mean_spread() {
        let spec = ModelSpec {
            kind: ModelKind::Stair,
            widths: Some(WidthRule::Constant { s: 2 }),
            a: vec![0.0, 4.5],
            coupling: 0.0,
            potential: None,
            seed: 0,
            depth: 3,
        };
        assert!(matches!(spec.validate(), Err(Error::SpecInvalid(_))));
    }

    #[test]
    fn built_models_pass_probe_checks() {
        let tol = TolerancePolicy::default();
        for spec in [
            stair_spec(5),
            ModelSpec {
                kind: ModelKind::Strip,
                widths: None,
                a: vec![0.3, -0.3],
                coupling: -1.0,
                potential: None,
                seed: 5,
                depth: 5,
            },
        ] {
            let (so, cd) = build_model(&spec).unwrap();
            so.validate().unwrap();
            let reports = crate::graph::check_a2(&so, &cd, 3, 11, &tol);
            for rep in reports {
                assert!(rep.any_full_rank, "shell {}", rep.shell);
            }
        }
    }
}
