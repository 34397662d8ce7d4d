//! Distributed variational-inequality instances.
//!
//! A [`VIProblem`] is an operator `F = (1/M) Σ_m F_m` split over `M` nodes,
//! where every node operator may itself be a finite sum
//! `F_m = (1/r) Σ_i F_{m,i}`. All operators shipped here are affine, which
//! keeps Lipschitz constants, strong-monotonicity moduli and exact solutions
//! computable.
//!
//! The saddle-point family is the distributed bilinear game
//! `g_m(x, y) = xᵀA_m y + a_mᵀx + b_mᵀy + λ/2‖x‖² − λ/2‖y‖²` mapped to
//! `z = (x, y)` and `F_m(z) = [∇_x g_m, −∇_y g_m]`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Matrix, PowerIteration};

/// Largest condition number accepted when solving for the exact solution.
pub const MAX_CONDITION: f64 = 1e14;

/// Diagonal shift added to every generated `BᵀB`.
pub const BILINEAR_SHIFT: f64 = 1e-3;

/// Which convergence regime the theory should be applied in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StronglyMonotone,
    Monotone,
    NonMonotoneMinty,
}

/// Problem constants consumed by the step-size calculators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lipschitz constant of the averaged operator `F`.
    pub l_global: f64,
    /// Per-node Lipschitz constants `L_m`.
    pub l_node: Vec<f64>,
    /// `sqrt(mean_m L_m²)`.
    pub l_tilde: f64,
    /// Per-component constants `L_{m,i}`; a single entry per node when `r = 1`.
    pub l_component: Vec<Vec<f64>>,
    /// `sqrt(mean_m mean_i L_{m,i}²)`.
    pub l_hat: f64,
    /// Strong-monotonicity modulus (0 when merely monotone or worse).
    pub mu: f64,
    pub regime: Regime,
}

impl Constants {
    /// Per-node `sqrt(mean_i L_{m,i}²)`.
    pub fn l_node_tilde(&self) -> Vec<f64> {
        self.l_component
            .iter()
            .map(|c| (c.iter().map(|l| l * l).sum::<f64>() / c.len() as f64).sqrt())
            .collect()
    }

    pub fn l_max(&self) -> f64 {
        self.l_node.iter().copied().fold(0.0, f64::max)
    }
}

/// `F(x, y) = [A y + a + λx; −Aᵀx − b + λy]` on `z = (x, y)`, x first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearBlock {
    pub a: Matrix,
    pub lin_x: Vec<f64>,
    pub lin_y: Vec<f64>,
    pub lambda: f64,
}

/// `F(z) = B z + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseAffine {
    pub matrix: Matrix,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AffineOperator {
    Bilinear(BilinearBlock),
    Dense(DenseAffine),
}

impl BilinearBlock {
    pub fn new(a: Matrix, lin_x: Vec<f64>, lin_y: Vec<f64>, lambda: f64) -> Result<Self> {
        if a.rows() != lin_x.len() || a.cols() != lin_y.len() {
            return Err(Error::DimensionMismatch {
                expected: a.rows() + a.cols(),
                got: lin_x.len() + lin_y.len(),
            });
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { a, lin_x, lin_y, lambda })
    }

    fn split(&self) -> usize {
        self.a.rows()
    }
}

impl AffineOperator {
    pub fn dense(matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                got: offset.len(),
            });
        }
        Ok(Self::Dense(DenseAffine { matrix, offset }))
    }

    /// `F(z) = scale · z`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Matrix::identity(dim);
        m.scale(scale);
        Self::Dense(DenseAffine {
            matrix: m,
            offset: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Bilinear(b) => b.a.rows() + b.a.cols(),
            Self::Dense(d) => d.offset.len(),
        }
    }

    /// Writes `F(z)` into `out`.
    pub fn apply_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        match self {
            Self::Bilinear(b) => {
                let n = b.split();
                let (x, y) = z.split_at(n);
                let (ox, oy) = out.split_at_mut(n);
                for i in 0..n {
                    ox[i] = b.lin_x[i] + b.lambda * x[i];
                }
                b.a.mul_vec_acc(1.0, y, ox);
                for j in 0..oy.len() {
                    oy[j] = b.lambda * y[j] - b.lin_y[j];
                }
                b.a.tr_mul_vec_acc(-1.0, x, oy);
            }
            Self::Dense(d) => {
                out.copy_from_slice(&d.offset);
                d.matrix.mul_vec_acc(1.0, z, out);
            }
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(z, &mut out);
        out
    }

    /// `Bᵀ v` where `B` is the linear part of the operator.
    pub fn linear_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        match self {
            Self::Bilinear(b) => {
                // Bᵀ = [[λI, −A], [Aᵀ, λI]]
                let n = b.split();
                let (vx, vy) = v.split_at(n);
                let (ox, oy) = out.split_at_mut(n);
                for i in 0..n {
                    ox[i] = b.lambda * vx[i];
                }
                b.a.mul_vec_acc(-1.0, vy, ox);
                for j in 0..oy.len() {
                    oy[j] = b.lambda * vy[j];
                }
                b.a.tr_mul_vec_acc(1.0, vx, oy);
            }
            Self::Dense(d) => d.matrix.tr_mul_vec_acc(1.0, v, &mut out),
        }
        out
    }

    /// Lipschitz constant. For bilinear blocks this is the bound `‖A‖₂ + λ`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Bilinear(b) => linalg::spectral_norm(&b.a, PowerIteration::default()) + b.lambda,
            Self::Dense(d) => linalg::spectral_norm(&d.matrix, PowerIteration::default()),
        }
    }

    /// `‖B + Bᵀ‖₂`, the curvature of `u ↦ ⟨F(u), v − u⟩`.
    pub fn symmetric_part_norm(&self) -> f64 {
        match self {
            Self::Bilinear(b) => 2.0 * b.lambda,
            Self::Dense(d) => {
                let mut s = d.matrix.transpose();
                // add_scaled only fails on shape mismatch, which cannot happen here
                s.add_scaled(1.0, &d.matrix).expect("square matrix");
                linalg::spectral_norm(&s, PowerIteration::default())
            }
        }
    }

    /// Strong-monotonicity modulus: smallest eigenvalue of the symmetric part.
    pub fn monotonicity_modulus(&self) -> f64 {
        match self {
            Self::Bilinear(b) => b.lambda,
            Self::Dense(d) => linalg::min_symmetric_eigenvalue(&d.matrix),
        }
    }

    pub fn to_dense(&self) -> DenseAffine {
        match self {
            Self::Dense(d) => d.clone(),
            Self::Bilinear(b) => {
                let n = b.a.rows();
                let p = b.a.cols();
                let dim = n + p;
                let mut m = Matrix::zeros(dim, dim);
                for i in 0..n {
                    m.set(i, i, b.lambda);
                    for j in 0..p {
                        m.set(i, n + j, b.a.get(i, j));
                        m.set(n + j, i, -b.a.get(i, j));
                    }
                }
                for j in 0..p {
                    m.set(n + j, n + j, b.lambda);
                }
                let mut offset = b.lin_x.clone();
                offset.extend(b.lin_y.iter().map(|v| -v));
                DenseAffine { matrix: m, offset }
            }
        }
    }

    /// Operator average `(1/n) Σ ops`. Bilinear blocks sharing `λ` stay
    /// bilinear; anything else is averaged in dense form.
    pub fn average(ops: &[&AffineOperator]) -> Result<AffineOperator> {
        let first = ops
            .first()
            .ok_or_else(|| Error::InvalidParameter("cannot average zero operators".into()))?;
        let dim = first.dim();
        for op in ops {
            check_dim(dim, op.dim())?;
        }
        let inv = 1.0 / ops.len() as f64;
        let bilinear: Option<Vec<&BilinearBlock>> = ops
            .iter()
            .map(|op| match op {
                Self::Bilinear(b) => Some(b),
                Self::Dense(_) => None,
            })
            .collect();
        if let Some(blocks) = bilinear {
            let lambda = blocks[0].lambda;
            let split = blocks[0].split();
            if blocks.iter().all(|b| b.lambda == lambda && b.split() == split) {
                let mut a = Matrix::zeros(blocks[0].a.rows(), blocks[0].a.cols());
                let mut lin_x = vec![0.0; blocks[0].lin_x.len()];
                let mut lin_y = vec![0.0; blocks[0].lin_y.len()];
                for b in &blocks {
                    a.add_scaled(1.0, &b.a)?;
                    linalg::axpy(1.0, &b.lin_x, &mut lin_x);
                    linalg::axpy(1.0, &b.lin_y, &mut lin_y);
                }
                a.scale(inv);
                lin_x.iter_mut().for_each(|v| *v *= inv);
                lin_y.iter_mut().for_each(|v| *v *= inv);
                return Ok(Self::Bilinear(BilinearBlock { a, lin_x, lin_y, lambda }));
            }
        }
        let mut matrix = Matrix::zeros(dim, dim);
        let mut offset = vec![0.0; dim];
        for op in ops {
            let d = op.to_dense();
            matrix.add_scaled(1.0, &d.matrix)?;
            linalg::axpy(1.0, &d.offset, &mut offset);
        }
        matrix.scale(inv);
        offset.iter_mut().for_each(|v| *v *= inv);
        Ok(Self::Dense(DenseAffine { matrix, offset }))
    }

    /// Component `block` of `parts` for a row-block finite-sum split: the rows
    /// of the matrix in that block are scaled by `parts`, the rest zeroed, and
    /// the constant terms are kept. Averaging all parts gives back `self`.
    fn row_block(&self, block: usize, parts: usize) -> AffineOperator {
        let scale = parts as f64;
        let keep = |rows: usize, i: usize| block_of(i, rows, parts) == block;
        match self {
            Self::Bilinear(b) => {
                let rows = b.a.rows();
                let mut a = Matrix::zeros(rows, b.a.cols());
                for i in (0..rows).filter(|&i| keep(rows, i)) {
                    for j in 0..b.a.cols() {
                        a.set(i, j, scale * b.a.get(i, j));
                    }
                }
                Self::Bilinear(BilinearBlock {
                    a,
                    lin_x: b.lin_x.clone(),
                    lin_y: b.lin_y.clone(),
                    lambda: b.lambda,
                })
            }
            Self::Dense(d) => {
                let rows = d.matrix.rows();
                let mut m = Matrix::zeros(rows, d.matrix.cols());
                for i in (0..rows).filter(|&i| keep(rows, i)) {
                    for j in 0..d.matrix.cols() {
                        m.set(i, j, scale * d.matrix.get(i, j));
                    }
                }
                Self::Dense(DenseAffine {
                    matrix: m,
                    offset: d.offset.clone(),
                })
            }
        }
    }
}

fn block_of(i: usize, rows: usize, parts: usize) -> usize {
    // contiguous blocks whose sizes differ by at most one
    (i * parts) / rows.max(1)
}

/// One node: its full operator plus (optionally) finite-sum components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub operator: AffineOperator,
    /// Empty when the node is deterministic (`r = 1`).
    pub components: Vec<AffineOperator>,
}

impl Node {
    pub fn deterministic(operator: AffineOperator) -> Self {
        Self {
            operator,
            components: Vec::new(),
        }
    }

    /// Node whose operator is the average of `components`.
    pub fn finite_sum(components: Vec<AffineOperator>) -> Result<Self> {
        let refs: Vec<&AffineOperator> = components.iter().collect();
        let operator = AffineOperator::average(&refs)?;
        Ok(if components.len() == 1 {
            Self::deterministic(operator)
        } else {
            Self { operator, components }
        })
    }

    fn component_count(&self) -> usize {
        self.components.len().max(1)
    }

    fn component(&self, i: usize) -> &AffineOperator {
        if self.components.is_empty() {
            &self.operator
        } else {
            &self.components[i]
        }
    }
}

/// Matrices and vectors of the distributed bilinear game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearSpec {
    pub a: Vec<Matrix>,
    pub lin_x: Vec<Vec<f64>>,
    pub lin_y: Vec<Vec<f64>>,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaMode {
    /// `λ = max_m ‖A_m‖₂ / 10⁵`.
    PaperRule,
    Explicit(f64),
}

impl BilinearSpec {
    /// Random instance: `A_m = BᵀB + 10⁻³ I` with standard-normal `B`, and
    /// `a_m`, `b_m` uniform on `[−1, 1]`. Draw order per node is `B` (row
    /// major), then `a_m`, then `b_m`, all from one ChaCha8 stream.
    pub fn random(d: usize, nodes: usize, seed: u64, lambda: LambdaMode) -> Result<Self> {
        if d == 0 || nodes == 0 {
            return Err(Error::InvalidParameter("bilinear problem needs d >= 1 and M >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(nodes);
        let mut lin_x = Vec::with_capacity(nodes);
        let mut lin_y = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let entries: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
            let b = Matrix::from_row_major(d, d, entries)?;
            let mut am = b.gram();
            am.add_diagonal(BILINEAR_SHIFT);
            a.push(am);
            lin_x.push((0..d).map(|_| rng.random_range(-1.0..=1.0)).collect());
            lin_y.push((0..d).map(|_| rng.random_range(-1.0..=1.0)).collect());
        }
        let lambda = match lambda {
            LambdaMode::PaperRule => {
                a.iter()
                    .map(|m| linalg::spectral_norm(m, PowerIteration::default()))
                    .fold(0.0, f64::max)
                    / 1e5
            }
            LambdaMode::Explicit(l) => l,
        };
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { a, lin_x, lin_y, lambda })
    }

    pub fn nodes(&self) -> usize {
        self.a.len()
    }

    fn blocks(&self) -> Result<Vec<BilinearBlock>> {
        if self.a.is_empty() || self.lin_x.len() != self.a.len() || self.lin_y.len() != self.a.len() {
            return Err(Error::InvalidParameter("bilinear spec needs matching A_m, a_m, b_m lists".into()));
        }
        self.a
            .iter()
            .zip(&self.lin_x)
            .zip(&self.lin_y)
            .map(|((a, x), y)| BilinearBlock::new(a.clone(), x.clone(), y.clone(), self.lambda))
            .collect()
    }
}

/// Solves `F(z) = 0` for the averaged bilinear operator.
pub fn exact_solution_bilinear(spec: &BilinearSpec) -> Result<Vec<f64>> {
    let ops: Vec<AffineOperator> = spec.blocks()?.into_iter().map(AffineOperator::Bilinear).collect();
    let refs: Vec<&AffineOperator> = ops.iter().collect();
    solve_affine(&AffineOperator::average(&refs)?)
}

fn solve_affine(op: &AffineOperator) -> Result<Vec<f64>> {
    let dense = op.to_dense();
    let rhs: Vec<f64> = dense.offset.iter().map(|c| -c).collect();
    linalg::solve_checked(&dense.matrix, &rhs, MAX_CONDITION)
}

/// A distributed VI instance. Immutable after construction.
#[derive(Clone, Debug)]
pub struct VIProblem {
    dim: usize,
    nodes: Vec<Node>,
    components: usize,
    global: AffineOperator,
    constants: Constants,
    exact_solution: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    format: String,
    version: u32,
    regime: Regime,
    nodes: Vec<Node>,
}

const FILE_FORMAT: &str = "masha-vi-problem";

impl VIProblem {
    /// Builds a problem from its nodes, deriving the averaged operator, the
    /// constants and (when the averaged system is well conditioned) the exact
    /// solution. `regime` overrides the regime inferred from `μ`.
    pub fn from_nodes(nodes: Vec<Node>, regime: Option<Regime>) -> Result<Self> {
        let first = nodes
            .first()
            .ok_or_else(|| Error::InvalidParameter("problem needs at least one node".into()))?;
        let dim = first.operator.dim();
        let components = first.component_count();
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        for node in &nodes {
            check_dim(dim, node.operator.dim())?;
            if node.component_count() != components {
                return Err(Error::InvalidParameter(
                    "every node needs the same number of components".into(),
                ));
            }
            for c in &node.components {
                check_dim(dim, c.dim())?;
            }
        }
        let refs: Vec<&AffineOperator> = nodes.iter().map(|n| &n.operator).collect();
        let global = AffineOperator::average(&refs)?;

        let l_node: Vec<f64> = nodes.iter().map(|n| n.operator.lipschitz()).collect();
        let l_component: Vec<Vec<f64>> = nodes
            .iter()
            .map(|n| {
                if n.components.is_empty() {
                    vec![n.operator.lipschitz()]
                } else {
                    n.components.iter().map(AffineOperator::lipschitz).collect()
                }
            })
            .collect();
        let m = nodes.len() as f64;
        let l_tilde = (l_node.iter().map(|l| l * l).sum::<f64>() / m).sqrt();
        let l_hat = (l_component
            .iter()
            .map(|c| c.iter().map(|l| l * l).sum::<f64>() / c.len() as f64)
            .sum::<f64>()
            / m)
            .sqrt();
        let l_global = global.lipschitz();
        let modulus = global.monotonicity_modulus();
        let scale_tol = 1e-12 * (1.0 + l_global);
        let inferred = if modulus > scale_tol {
            Regime::StronglyMonotone
        } else if modulus >= -scale_tol {
            Regime::Monotone
        } else {
            Regime::NonMonotoneMinty
        };
        let regime = regime.unwrap_or(inferred);
        let mu = if regime == Regime::StronglyMonotone { modulus.max(0.0) } else { 0.0 };
        let exact_solution = solve_affine(&global).ok();

        Ok(Self {
            dim,
            nodes,
            components,
            global,
            constants: Constants {
                l_global,
                l_node,
                l_tilde,
                l_component,
                l_hat,
                mu,
                regime,
            },
            exact_solution,
        })
    }

    pub fn bilinear(spec: &BilinearSpec) -> Result<Self> {
        let nodes = spec
            .blocks()?
            .into_iter()
            .map(|b| Node::deterministic(AffineOperator::Bilinear(b)))
            .collect();
        Self::from_nodes(nodes, None)
    }

    /// Splits every node into `parts` row-block components (see
    /// [`AffineOperator`] docs); `parts = 1` returns the problem unchanged.
    pub fn with_row_block_components(&self, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidParameter("component count must be >= 1".into()));
        }
        if parts == 1 {
            return Ok(self.clone());
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                operator: n.operator.clone(),
                components: (0..parts).map(|i| n.operator.row_block(i, parts)).collect(),
            })
            .collect();
        Self::from_nodes(nodes, Some(self.constants.regime))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Components per node (`r`).
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn regime(&self) -> Regime {
        self.constants.regime
    }

    pub fn exact_solution(&self) -> Option<&[f64]> {
        self.exact_solution.as_deref()
    }

    /// The averaged operator `F` in closed form.
    pub fn global_operator(&self) -> &AffineOperator {
        &self.global
    }

    fn check_node(&self, m: usize) -> Result<()> {
        if m < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                index: m,
                nodes: self.nodes.len(),
            })
        }
    }

    /// `F_m(z)`.
    pub fn eval_operator(&self, m: usize, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_operator_into(m, z, &mut out)?;
        Ok(out)
    }

    pub fn eval_operator_into(&self, m: usize, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_node(m)?;
        check_dim(self.dim, z.len())?;
        check_dim(self.dim, out.len())?;
        self.nodes[m].operator.apply_into(z, out);
        Ok(())
    }

    /// `F_{m,i}(z)`; with `r = 1` this is `F_m(z)`.
    pub fn eval_component(&self, m: usize, i: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.check_node(m)?;
        check_dim(self.dim, z.len())?;
        if i >= self.components {
            return Err(Error::ComponentOutOfRange {
                index: i,
                components: self.components,
            });
        }
        Ok(self.nodes[m].component(i).apply(z))
    }

    /// `F(z)` from the averaged closed-form operator.
    pub fn eval_global(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        Ok(self.global.apply(z))
    }

    /// `(1/M) Σ_m F_m(z)`, reduced in node order.
    pub fn eval_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        let values = (0..self.nodes.len())
            .map(|m| self.eval_operator(m, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(linalg::mean_in_order(values.iter().map(Vec::as_slice), self.dim))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProblemFile {
            format: FILE_FORMAT.into(),
            version: 1,
            regime: self.constants.regime,
            nodes: self.nodes.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        if file.format != FILE_FORMAT || file.version != 1 {
            return Err(Error::InvalidParameter(format!(
                "unsupported problem file {} v{}",
                file.format, file.version
            )));
        }
        Self::from_nodes(file.nodes, Some(file.regime))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Random distributed bilinear problem (see [`BilinearSpec::random`]).
pub fn make_bilinear(d: usize, nodes: usize, seed: u64, lambda: LambdaMode) -> Result<VIProblem> {
    VIProblem::bilinear(&BilinearSpec::random(d, nodes, seed, lambda)?)
}

/// Affine instance satisfying the Minty condition at a random `z*` with
/// entries in `[−1, 1]`: `F_m(z) = (S_m + D_m + ε I)(z − z*)` with skew `S_m`
/// and symmetric `D_m` that sum to zero over the nodes. Individual nodes are non-monotone; the average is a
/// rotation plus the `ε`-identity monotone part. The skew part is normalised
/// so the averaged rotation has unit spectral norm.
pub fn make_minty_rotation(dim: usize, nodes: usize, seed: u64, monotone_part: f64) -> Result<VIProblem> {
    if dim < 2 || nodes == 0 {
        return Err(Error::InvalidParameter("minty instance needs dim >= 2 and M >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skews = Vec::with_capacity(nodes);
    let mut syms = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        let g: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
        let g = Matrix::from_row_major(dim, dim, g)?;
        let mut skew = g.clone();
        skew.add_scaled(-1.0, &g.transpose())?;
        skews.push(skew);
        let h: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
        let h = Matrix::from_row_major(dim, dim, h)?;
        let mut sym = h.clone();
        sym.add_scaled(1.0, &h.transpose())?;
        syms.push(sym);
    }
    let mut skew_mean = Matrix::zeros(dim, dim);
    let mut sym_mean = Matrix::zeros(dim, dim);
    for (s, h) in skews.iter().zip(&syms) {
        skew_mean.add_scaled(1.0 / nodes as f64, s)?;
        sym_mean.add_scaled(1.0 / nodes as f64, h)?;
    }
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let norm = linalg::spectral_norm(&skew_mean, PowerIteration::default());
    let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    let node_ops = skews
        .into_iter()
        .zip(syms)
        .map(|(mut s, mut h)| {
            h.add_scaled(-1.0, &sym_mean)?;
            s.add_scaled(1.0, &h)?;
            s.scale(scale);
            s.add_diagonal(monotone_part);
            let mut offset = vec![0.0; dim];
            s.mul_vec_acc(-1.0, &center, &mut offset);
            AffineOperator::dense(s, offset).map(Node::deterministic)
        })
        .collect::<Result<Vec<_>>>()?;
    VIProblem::from_nodes(node_ops, Some(Regime::NonMonotoneMinty))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_bilinear(a: f64, ax: f64, by: f64, lambda: f64) -> BilinearSpec {
        BilinearSpec {
            a: vec![Matrix::from_rows(&[vec![a]]).unwrap()],
            lin_x: vec![vec![ax]],
            lin_y: vec![vec![by]],
            lambda,
        }
    }

    #[test]
    fn bilinear_operator_hand_example() {
        let p = VIProblem::bilinear(&toy_bilinear(2.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p.eval_operator(0, &[1.0, 1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn single_node_matches_global() {
        let p = make_bilinear(3, 1, 4, LambdaMode::Explicit(0.5)).unwrap();
        let z = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let local = p.eval_operator(0, &z).unwrap();
        let global = p.eval_global(&z).unwrap();
        for (a, b) in local.iter().zip(&global) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn eval_rejects_bad_input() {
        let p = make_bilinear(2, 2, 1, LambdaMode::Explicit(1.0)).unwrap();
        assert!(matches!(
            p.eval_operator(2, &[0.0; 4]),
            Err(Error::NodeOutOfRange { index: 2, nodes: 2 })
        ));
        assert!(matches!(
            p.eval_operator(0, &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(matches!(
            p.eval_component(0, 1, &[0.0; 4]),
            Err(Error::ComponentOutOfRange { .. })
        ));
    }

    #[test]
    fn component_zero_is_operator_when_deterministic() {
        let p = make_bilinear(2, 2, 9, LambdaMode::Explicit(0.3)).unwrap();
        let z = [1.0, 2.0, -1.0, 0.5];
        assert_eq!(p.eval_component(1, 0, &z).unwrap(), p.eval_operator(1, &z).unwrap());
    }

    #[test]
    fn constructed_two_component_split() {
        let node = Node::finite_sum(vec![
            AffineOperator::scaled_identity(3, 2.0),
            AffineOperator::scaled_identity(3, 0.0),
        ])
        .unwrap();
        let p = VIProblem::from_nodes(vec![node], None).unwrap();
        let z = [1.0, -2.0, 3.0];
        assert_eq!(p.components(), 2);
        assert_eq!(p.eval_operator(0, &z).unwrap(), z.to_vec());
        let c0 = p.eval_component(0, 0, &z).unwrap();
        let c1 = p.eval_component(0, 1, &z).unwrap();
        let avg: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(avg, z.to_vec());
    }

    #[test]
    fn default_lambda_rule_scales_with_largest_block() {
        let spec = BilinearSpec::random(100, 16, 3, LambdaMode::PaperRule).unwrap();
        let max_norm = spec
            .a
            .iter()
            .map(|m| linalg::spectral_norm(m, PowerIteration::default()))
            .fold(0.0, f64::max);
        assert_eq!(spec.lambda, max_norm / 1e5);
        let p = VIProblem::bilinear(&spec).unwrap();
        assert_eq!(p.regime(), Regime::StronglyMonotone);
        assert_eq!(p.constants().mu, spec.lambda);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = BilinearSpec::random(5, 3, 17, LambdaMode::PaperRule).unwrap();
        let b = BilinearSpec::random(5, 3, 17, LambdaMode::PaperRule).unwrap();
        assert_eq!(a, b);
        let c = BilinearSpec::random(5, 3, 18, LambdaMode::PaperRule).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(BilinearSpec::random(2, 1, 0, LambdaMode::Explicit(-1.0)).is_err());
    }

    #[test]
    fn exact_solution_hand_examples() {
        let z = exact_solution_bilinear(&toy_bilinear(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        // λx + Ay = −a, λy − Aᵀx = b with A = 1, a = 1, b = 0, λ = 1
        let z = exact_solution_bilinear(&toy_bilinear(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((z[0] + 0.5).abs() < 1e-15 && (z[1] + 0.5).abs() < 1e-15, "{z:?}");
    }

    #[test]
    fn exact_solution_residuals() {
        for (d, m, seed) in [(2, 1, 0), (5, 3, 1), (8, 4, 2)] {
            let p = make_bilinear(d, m, seed, LambdaMode::Explicit(1.0)).unwrap();
            let z = p.exact_solution().unwrap();
            let r = linalg::norm(&p.eval_mean(z).unwrap());
            assert!(r <= 1e-10 * (1.0 + linalg::norm(z)), "d={d}: residual {r}");
        }
    }

    #[test]
    fn singular_system_rejected() {
        let spec = toy_bilinear(0.0, 1.0, 1.0, 0.0);
        assert!(matches!(exact_solution_bilinear(&spec), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn json_round_trip() {
        let p = make_bilinear(3, 2, 5, LambdaMode::PaperRule).unwrap();
        let q = VIProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.nodes(), q.nodes());
        assert_eq!(p.constants(), q.constants());
        assert_eq!(p.exact_solution(), q.exact_solution());
    }

    #[test]
    fn minty_instance_is_minty_but_nodes_are_not_monotone() {
        let p = make_minty_rotation(6, 4, 3, 1e-3).unwrap();
        assert_eq!(p.regime(), Regime::NonMonotoneMinty);
        let z_star = p.exact_solution().unwrap();
        assert!(linalg::norm(z_star) > 0.1);
        for m in 0..p.num_nodes() {
            assert!(linalg::norm(&p.eval_operator(m, z_star).unwrap()) < 1e-12);
        }
        assert!((p.global_operator().monotonicity_modulus() - 1e-3).abs() < 1e-9);
        assert!(p.nodes().iter().any(|n| n.operator.monotonicity_modulus() < 0.0));
    }

    #[test]
    fn constants_ordering() {
        let p = make_bilinear(6, 4, 11, LambdaMode::Explicit(0.1))
            .unwrap()
            .with_row_block_components(3)
            .unwrap();
        let c = p.constants();
        assert!(c.l_global <= c.l_tilde * (1.0 + 1e-9));
        assert!(c.l_tilde <= c.l_hat * (1.0 + 1e-9));
        assert!(c.mu <= c.l_global);
    }
}
