//! Data model for two-level nested mixed-effects problems: per-cluster design
//! blocks, model parameters, design construction from a data table, and
//! response simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::table::DataTable;

/// One model term on either side of the formula.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Column(String),
    /// `name^k`, numeric columns only.
    Power(String, u32),
    /// `a:b` product of two columns.
    Interaction(String, String),
}

/// Parsed model description: which columns form the response, the fixed and
/// random designs, and the grouping column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub fixed_terms: Vec<Term>,
    pub random_terms: Vec<Term>,
    pub group: String,
    pub fixed_intercept: bool,
    pub random_intercept: bool,
}

/// Rows of one cluster: response `y` (n_i), fixed design `x` (n_i × p), and
/// random design `z` (n_i × q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBlock {
    pub cluster_id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl ClusterBlock {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
}

/// A grouped two-level data set: cluster blocks in first-appearance order plus
/// design column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedData {
    pub clusters: Vec<ClusterBlock>,
    pub n_total: usize,
    pub p: usize,
    pub q: usize,
    pub g: usize,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
}

impl GroupedData {
    /// Validates shape invariants and full column rank of the stacked fixed
    /// design.
    pub fn new(
        clusters: Vec<ClusterBlock>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        let data = Self::assemble(clusters, fixed_names, random_names)?;
        let rank = linalg::rank(&data.stacked_x());
        if rank < data.p {
            return Err(Error::RankDeficientDesign { rank, p: data.p });
        }
        Ok(data)
    }

    /// Shape checks only; used by resamplers whose output may legitimately be
    /// rank deficient (the refit reports that instead).
    pub(crate) fn assemble(
        clusters: Vec<ClusterBlock>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        if clusters.len() < 2 {
            return Err(Error::TooFewClusters { found: clusters.len() });
        }
        let p = fixed_names.len();
        let q = random_names.len();
        let mut n_total = 0usize;
        for block in &clusters {
            if block.n_rows() == 0 {
                return Err(Error::EmptyCluster { cluster_id: block.cluster_id.clone() });
            }
            if block.x.nrows() != block.n_rows() || block.z.nrows() != block.n_rows() {
                return Err(Error::DimensionMismatch {
                    context: format!("cluster `{}` has inconsistent row counts", block.cluster_id),
                });
            }
            if block.x.ncols() != p || block.z.ncols() != q {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "cluster `{}` has design widths ({}, {}), expected ({p}, {q})",
                        block.cluster_id,
                        block.x.ncols(),
                        block.z.ncols()
                    ),
                });
            }
            n_total += block.n_rows();
        }
        let g = clusters.len();
        Ok(GroupedData { clusters, n_total, p, q, g, fixed_names, random_names })
    }

    pub fn stacked_x(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_total, self.p);
        let mut row = 0;
        for block in &self.clusters {
            x.rows_mut(row, block.n_rows()).copy_from(&block.x);
            row += block.n_rows();
        }
        x
    }

    pub fn stacked_y(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_total);
        let mut row = 0;
        for block in &self.clusters {
            y.rows_mut(row, block.n_rows()).copy_from(&block.y);
            row += block.n_rows();
        }
        y
    }

    /// Same designs with new per-cluster responses. Used by resamplers that
    /// only perturb `y`.
    pub fn with_responses(&self, responses: &[DVector<f64>]) -> Result<GroupedData> {
        if responses.len() != self.g {
            return Err(Error::DimensionMismatch {
                context: format!("{} response vectors for {} clusters", responses.len(), self.g),
            });
        }
        let mut out = self.clone();
        for (block, y) in out.clusters.iter_mut().zip(responses) {
            if y.len() != block.n_rows() {
                return Err(Error::DimensionMismatch {
                    context: format!(
                        "cluster `{}` response has length {}, expected {}",
                        block.cluster_id,
                        y.len(),
                        block.n_rows()
                    ),
                });
            }
            block.y = y.clone();
        }
        Ok(out)
    }
}

/// Model parameters: fixed effects, random-effects covariance, and residual
/// variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub beta: DVector<f64>,
    pub d: DMatrix<f64>,
    pub sigma2: f64,
}

impl Parameters {
    /// Validates symmetry of `d` (within 1e-12 of its scale), clamps
    /// round-off-negative eigenvalues to zero, and requires `sigma2 > 0`.
    pub fn new(beta: DVector<f64>, d: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::DimensionMismatch {
                context: format!("covariance must be square, got {}x{}", d.nrows(), d.ncols()),
            });
        }
        let scale = d.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
        for i in 0..d.nrows() {
            for j in (i + 1)..d.ncols() {
                if (d[(i, j)] - d[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::DimensionMismatch {
                        context: "random-effects covariance is not symmetric".into(),
                    });
                }
            }
        }
        let sym = (&d + d.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_ev < -1e-10 * scale {
            return Err(Error::DimensionMismatch {
                context: format!("random-effects covariance has eigenvalue {min_ev} < 0"),
            });
        }
        let d = if min_ev < 0.0 {
            // Clamp round-off negatives to zero and rebuild.
            let mut scaled = eig.eigenvectors.clone();
            for (j, ev) in eig.eigenvalues.iter().enumerate() {
                scaled.column_mut(j).scale_mut(ev.max(0.0));
            }
            &scaled * eig.eigenvectors.transpose()
        } else {
            sym
        };
        if !(sigma2 > 0.0) {
            return Err(Error::DimensionMismatch {
                context: format!("sigma2 must be positive, got {sigma2}"),
            });
        }
        Ok(Parameters { beta, d, sigma2 })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.d.nrows()
    }

    /// Marginal response covariance `Z D Z' + sigma2 I` for one cluster.
    pub fn marginal_covariance(&self, block: &ClusterBlock) -> DMatrix<f64> {
        let mut v = &block.z * &self.d * block.z.transpose();
        for i in 0..block.n_rows() {
            v[(i, i)] += self.sigma2;
        }
        v
    }
}

/// Dummy-encode a term list against a table. Categorical columns expand to
/// one indicator per non-reference level (reference = lexicographically first
/// level, column name = column ++ level).
struct DesignBuilder<'a> {
    table: &'a DataTable,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl<'a> DesignBuilder<'a> {
    fn new(table: &'a DataTable, intercept: bool) -> Self {
        let mut b = DesignBuilder { table, names: Vec::new(), columns: Vec::new() };
        if intercept {
            b.names.push("(Intercept)".to_string());
            b.columns.push(vec![1.0; table.n_rows()]);
        }
        b
    }

    /// Encoded columns for a single column name: the column itself when
    /// numeric, otherwise its non-reference level indicators.
    fn encode_column(&self, name: &str) -> Result<Vec<(String, Vec<f64>)>> {
        let idx = self.table.column_index(name)?;
        if self.table.is_numeric(idx) {
            Ok(vec![(name.to_string(), self.table.numeric_column(idx)?.to_vec())])
        } else {
            let levels = self.table.levels(idx);
            let raw = self.table.raw_column(idx);
            Ok(levels
                .iter()
                .skip(1)
                .map(|level| {
                    let col = raw.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect();
                    (format!("{name}{level}"), col)
                })
                .collect())
        }
    }

    fn push_term(&mut self, term: &Term) -> Result<()> {
        match term {
            Term::Column(name) => {
                for (label, col) in self.encode_column(name)? {
                    self.names.push(label);
                    self.columns.push(col);
                }
            }
            Term::Power(name, k) => {
                let idx = self.table.column_index(name)?;
                let values = self.table.numeric_column(idx)?;
                self.names.push(format!("{name}^{k}"));
                self.columns.push(values.iter().map(|v| v.powi(*k as i32)).collect());
            }
            Term::Interaction(a, b) => {
                for (la, ca) in self.encode_column(a)? {
                    for (lb, cb) in self.encode_column(b)? {
                        self.names.push(format!("{la}:{lb}"));
                        self.columns.push(ca.iter().zip(&cb).map(|(x, y)| x * y).collect());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Build a [`GroupedData`] from a table and a model spec.
///
/// Rows are grouped by the spec's group column in first-appearance order with
/// within-cluster row order preserved; the group column is used categorically
/// whatever its inferred type.
pub fn build_design(table: &DataTable, spec: &ModelSpec) -> Result<GroupedData> {
    if table.n_rows() == 0 {
        return Err(Error::DimensionMismatch { context: "data table is empty".into() });
    }
    let response_idx = table.column_index(&spec.response)?;
    let response = table.numeric_column(response_idx)?;
    let group_idx = table.column_index(&spec.group)?;
    let group = table.raw_column(group_idx);

    let mut fixed = DesignBuilder::new(table, spec.fixed_intercept);
    for term in &spec.fixed_terms {
        fixed.push_term(term)?;
    }
    let mut random = DesignBuilder::new(table, spec.random_intercept);
    for term in &spec.random_terms {
        random.push_term(term)?;
    }

    // Cluster labels in first-appearance order.
    let mut order: Vec<&String> = Vec::new();
    for label in group {
        if !order.contains(&label) {
            order.push(label);
        }
    }
    if order.len() < 2 {
        return Err(Error::TooFewClusters { found: order.len() });
    }

    let p = fixed.names.len();
    let q = random.names.len();
    let mut clusters = Vec::with_capacity(order.len());
    for label in &order {
        let rows: Vec<usize> = group
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (v == *label).then_some(i))
            .collect();
        let ni = rows.len();
        let y = DVector::from_iterator(ni, rows.iter().map(|&i| response[i]));
        let x = DMatrix::from_fn(ni, p, |r, c| fixed.columns[c][rows[r]]);
        let z = DMatrix::from_fn(ni, q, |r, c| random.columns[c][rows[r]]);
        clusters.push(ClusterBlock { cluster_id: (*label).clone(), y, x, z });
    }

    GroupedData::new(clusters, fixed.names, random.names)
}

/// Simulate per-cluster responses `X beta + Z b + e` with `b ~ N(0, D)` and
/// `e ~ N(0, sigma2 I)`.
///
/// Draw order is fixed: for each cluster in order, the q random-effect
/// normals first, then the n_i error normals.
pub fn simulate_response<R: Rng>(
    data: &GroupedData,
    params: &Parameters,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if params.p() != data.p || params.q() != data.q {
        return Err(Error::DimensionMismatch {
            context: format!(
                "parameters are ({}, {}), data needs ({}, {})",
                params.p(),
                params.q(),
                data.p,
                data.q
            ),
        });
    }
    let d_root = linalg::psd_sqrt(&params.d);
    let sigma = params.sigma2.sqrt();
    let mut out = Vec::with_capacity(data.g);
    for block in &data.clusters {
        let z_b: DVector<f64> =
            DVector::from_iterator(data.q, (0..data.q).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let b = &d_root * z_b;
        let ni = block.n_rows();
        let eps: DVector<f64> =
            DVector::from_iterator(ni, (0..ni).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)));
        out.push(&block.x * &params.beta + &block.z * b + eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::rng::seeded_rng;
    use approx::assert_relative_eq;

    fn six_row_table() -> DataTable {
        DataTable::from_csv_reader(
            "y,x,g\n1.0,0.5,a\n2.0,1.5,a\n3.0,2.5,b\n4.0,3.5,b\n5.0,4.5,c\n6.0,5.5,c\n".as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn three_clusters_of_two() {
        let spec = parse_formula("y ~ x + (1|g)").unwrap();
        let data = build_design(&six_row_table(), &spec).unwrap();
        assert_eq!(data.g, 3);
        assert_eq!(data.p, 2);
        assert_eq!(data.q, 1);
        assert_eq!(data.n_total, 6);
        assert_eq!(data.fixed_names, vec!["(Intercept)", "x"]);
        assert_eq!(data.random_names, vec!["(Intercept)"]);
        assert_eq!(data.clusters[0].cluster_id, "a");
        assert_eq!(data.clusters[0].y, DVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn categorical_dummy_uses_first_level_as_reference() {
        let table = DataTable::from_csv_reader(
            "y,class,g\n1,manual,a\n2,nonmanual,a\n3,manual,b\n4,nonmanual,b\n".as_bytes(),
        )
        .unwrap();
        let spec = parse_formula("y ~ class + (1|g)").unwrap();
        let data = build_design(&table, &spec).unwrap();
        assert_eq!(data.fixed_names, vec!["(Intercept)", "classnonmanual"]);
        assert_eq!(data.clusters[0].x.column(1).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn absent_column_is_reported() {
        let spec = parse_formula("y ~ zz + (1|g)").unwrap();
        match build_design(&six_row_table(), &spec) {
            Err(Error::MissingColumn { name }) => assert_eq!(name, "zz"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let table = DataTable::from_csv_reader(
            "y,x,x2,g\n1,1,2,a\n2,2,4,a\n3,3,6,b\n4,4,8,b\n".as_bytes(),
        )
        .unwrap();
        let spec = parse_formula("y ~ x + x2 + (1|g)").unwrap();
        assert!(matches!(build_design(&table, &spec), Err(Error::RankDeficientDesign { .. })));
    }

    #[test]
    fn numeric_group_column_is_used_categorically() {
        let table = DataTable::from_csv_reader(
            "y,x,school\n1,0.5,1\n2,1.5,1\n3,2.5,2\n4,3.5,2\n".as_bytes(),
        )
        .unwrap();
        let spec = parse_formula("y ~ x + (1|school)").unwrap();
        let data = build_design(&table, &spec).unwrap();
        assert_eq!(data.clusters[0].cluster_id, "1");
        assert_eq!(data.clusters[1].cluster_id, "2");
    }

    #[test]
    fn build_design_is_deterministic() {
        let spec = parse_formula("y ~ x + (1|g)").unwrap();
        let a = build_design(&six_row_table(), &spec).unwrap();
        let b = build_design(&six_row_table(), &spec).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn degenerate_noise_recovers_mean_structure() {
        let spec = parse_formula("y ~ x + (1|g)").unwrap();
        let data = build_design(&six_row_table(), &spec).unwrap();
        let params = Parameters::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::zeros(1, 1),
            1e-30,
        )
        .unwrap();
        let mut rng = seeded_rng(7);
        let ys = simulate_response(&data, &params, &mut rng).unwrap();
        for (block, y) in data.clusters.iter().zip(&ys) {
            let mean = &block.x * &params.beta;
            assert_relative_eq!(y, &mean, epsilon = 1e-10);
        }
    }

    #[test]
    fn simulation_is_deterministic_in_the_seed() {
        let spec = parse_formula("y ~ x + (1|g)").unwrap();
        let data = build_design(&six_row_table(), &spec).unwrap();
        let params = Parameters::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_element(1, 1, 0.5),
            1.5,
        )
        .unwrap();
        let a = simulate_response(&data, &params, &mut seeded_rng(11)).unwrap();
        let b = simulate_response(&data, &params, &mut seeded_rng(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_mean_variance_matches_total_variance_law() {
        // Var(cluster mean) = tau2 + sigma2 / n_i; here 4 + 1/5.
        let g = 2000;
        let ni = 5;
        let blocks: Vec<ClusterBlock> = (0..g)
            .map(|i| ClusterBlock {
                cluster_id: format!("c{i}"),
                y: DVector::zeros(ni),
                x: DMatrix::from_element(ni, 1, 1.0),
                z: DMatrix::from_element(ni, 1, 1.0),
            })
            .collect();
        let data = GroupedData::new(blocks, vec!["(Intercept)".into()], vec!["(Intercept)".into()]).unwrap();
        let params = Parameters::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 4.0),
            1.0,
        )
        .unwrap();
        let ys = simulate_response(&data, &params, &mut seeded_rng(123)).unwrap();
        let means: Vec<f64> = ys.iter().map(|y| y.mean()).collect();
        let grand = means.iter().sum::<f64>() / g as f64;
        let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (g - 1) as f64;
        let expected = 4.0 + 1.0 / ni as f64;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn pooled_variance_converges_to_sigma2() {
        // params (beta, 0, sigma2): residual variance of y - X beta is sigma2.
        let g = 200;
        let ni = 500;
        let blocks: Vec<ClusterBlock> = (0..g)
            .map(|i| ClusterBlock {
                cluster_id: format!("c{i}"),
                y: DVector::zeros(ni),
                x: DMatrix::from_element(ni, 1, 1.0),
                z: DMatrix::from_element(ni, 1, 1.0),
            })
            .collect();
        let data = GroupedData::new(blocks, vec!["(Intercept)".into()], vec!["(Intercept)".into()]).unwrap();
        let sigma2 = 2.5;
        let params =
            Parameters::new(DVector::from_vec(vec![3.0]), DMatrix::zeros(1, 1), sigma2).unwrap();
        let ys = simulate_response(&data, &params, &mut seeded_rng(321)).unwrap();
        let mut ss = 0.0;
        let mut n = 0usize;
        for (block, y) in data.clusters.iter().zip(&ys) {
            let r = y - &block.x * &params.beta;
            ss += r.dot(&r);
            n += r.len();
        }
        assert!(n >= 100_000);
        let pooled = ss / n as f64;
        assert!((pooled - sigma2).abs() / sigma2 < 0.03, "pooled {pooled} vs {sigma2}");
    }

    #[test]
    fn marginal_covariance_is_spd_for_positive_sigma2() {
        let spec = parse_formula("y ~ x + (1|g)").unwrap();
        let data = build_design(&six_row_table(), &spec).unwrap();
        let params = Parameters::new(
            DVector::zeros(2),
            DMatrix::from_element(1, 1, 0.7),
            0.3,
        )
        .unwrap();
        for block in &data.clusters {
            let v = params.marginal_covariance(block);
            assert_relative_eq!(&v, &v.transpose(), epsilon = 1e-12);
            assert!(crate::linalg::chol_lower(&v).is_some());
        }
    }

    #[test]
    fn parameters_reject_asymmetry_and_bad_sigma() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(Parameters::new(DVector::zeros(1), d, 1.0).is_err());
        assert!(Parameters::new(DVector::zeros(1), DMatrix::zeros(1, 1), 0.0).is_err());
    }
}
