//! PCA monitoring model fitted on normal-operation data.
//!
//! Data are z-scored by the training mean and standard deviation, the sample
//! covariance of the standardized data is eigendecomposed, and the leading
//! components that reach the requested share of total variance span the
//! principal subspace. Everything else is residual.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{DataMatrix, FeatureError};

#[derive(Debug, Clone)]
pub struct PcaModel {
    columns: Vec<String>,
    mean: DVector<f64>,
    std: DVector<f64>,
    /// All eigenvalues, descending.
    eigenvalues: DVector<f64>,
    /// Eigenvectors as columns, in eigenvalue order.
    loadings: DMatrix<f64>,
    n_pc: usize,
    r_pc: f64,
    proj_pc: DMatrix<f64>,
    proj_res: DMatrix<f64>,
    d_matrix: DMatrix<f64>,
}

/// Column-major storage is an implementation detail; the file is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>, FeatureError> {
        if self.data.len() != self.rows * self.cols {
            return Err(FeatureError::Model(format!(
                "loadings declare {}x{} but carry {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaModelFile {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub loadings: MatrixRecord,
    pub n_pc: usize,
    pub r_pc: f64,
}

/// Flip each column so its largest-magnitude entry is positive (first such
/// entry on ties).
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Smallest k whose leading eigenvalues reach `r_pc` of the trace.
fn retained_count(eigenvalues: &DVector<f64>, r_pc: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let target = r_pc * total;
    let mut cum = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        cum += l;
        if cum >= target {
            return i + 1;
        }
    }
    eigenvalues.len()
}

impl PcaModel {
    pub fn fit(normal: &DataMatrix, r_pc: f64) -> Result<Self, FeatureError> {
        if !(r_pc > 0.0 && r_pc <= 1.0) {
            return Err(FeatureError::Param(format!("r_pc must lie in (0, 1], got {r_pc}")));
        }
        let (m, n) = (normal.nrows(), normal.ncols());
        if m < 2 {
            return Err(FeatureError::Shape(format!("need at least 2 samples, got {m}")));
        }
        if n < 2 {
            return Err(FeatureError::Shape(format!("need at least 2 variables, got {n}")));
        }
        let x = normal.values();
        let mean = DVector::from_iterator(n, x.column_iter().map(|c| c.sum() / m as f64));
        let mut std = DVector::zeros(n);
        for j in 0..n {
            let var = x
                .column(j)
                .iter()
                .map(|v| (v - mean[j]).powi(2))
                .sum::<f64>()
                / (m - 1) as f64;
            let s = var.sqrt();
            if s <= 1e-12 * mean[j].abs().max(1.0) {
                return Err(FeatureError::ConstantColumn(normal.columns()[j].clone()));
            }
            std[j] = s;
        }

        let mut z = x.clone();
        for j in 0..n {
            for i in 0..m {
                z[(i, j)] = (z[(i, j)] - mean[j]) / std[j];
            }
        }
        let mut cov = z.tr_mul(&z) / (m - 1) as f64;
        // exact symmetry before the eigensolver
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Eigen("covariance has non-finite entries".into()));
        }

        let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
            .ok_or_else(|| FeatureError::Eigen("symmetric eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut loadings = eig.eigenvectors.select_columns(order.iter());
        fix_signs(&mut loadings);

        let n_pc = retained_count(&eigenvalues, r_pc);
        Self::assemble(
            normal.columns().to_vec(),
            mean,
            std,
            eigenvalues,
            loadings,
            n_pc,
            r_pc,
        )
    }

    fn assemble(
        columns: Vec<String>,
        mean: DVector<f64>,
        std: DVector<f64>,
        eigenvalues: DVector<f64>,
        loadings: DMatrix<f64>,
        n_pc: usize,
        r_pc: f64,
    ) -> Result<Self, FeatureError> {
        let n = columns.len();
        if mean.len() != n || std.len() != n || eigenvalues.len() != n {
            return Err(FeatureError::Model("vector lengths disagree with column count".into()));
        }
        if loadings.shape() != (n, n) {
            return Err(FeatureError::Model(format!(
                "loadings must be {n}x{n}, got {}x{}",
                loadings.nrows(),
                loadings.ncols()
            )));
        }
        if n_pc == 0 || n_pc > n {
            return Err(FeatureError::Model(format!("n_pc {n_pc} out of range 1..={n}")));
        }
        if std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(FeatureError::Model("standard deviations must be positive".into()));
        }
        if eigenvalues.iter().take(n_pc).any(|&l| l.is_nan() || l <= 0.0) {
            return Err(FeatureError::Eigen(
                "a retained principal eigenvalue is not positive".into(),
            ));
        }

        let p = loadings.columns(0, n_pc);
        let p_res = loadings.columns(n_pc, n - n_pc);
        let proj_pc = p * p.transpose();
        let proj_res = p_res * p_res.transpose();
        let mut scaled = p.clone_owned();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col /= eigenvalues[j];
        }
        let d_matrix = &scaled * p.transpose();

        Ok(Self {
            columns,
            mean,
            std,
            eigenvalues,
            loadings,
            n_pc,
            r_pc,
            proj_pc,
            proj_res,
            d_matrix,
        })
    }

    pub fn to_file(&self) -> PcaModelFile {
        PcaModelFile {
            columns: self.columns.clone(),
            mean: self.mean.iter().copied().collect(),
            std: self.std.iter().copied().collect(),
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            loadings: MatrixRecord::from_matrix(&self.loadings),
            n_pc: self.n_pc,
            r_pc: self.r_pc,
        }
    }

    pub fn from_file(file: PcaModelFile) -> Result<Self, FeatureError> {
        let loadings = file.loadings.to_matrix()?;
        Self::assemble(
            file.columns,
            DVector::from_vec(file.mean),
            DVector::from_vec(file.std),
            DVector::from_vec(file.eigenvalues),
            loadings,
            file.n_pc,
            file.r_pc,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file()).expect("model serializes");
        std::fs::write(path, text + "\n")
            .map_err(|e| FeatureError::Model(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| FeatureError::Model(format!("{}: {e}", path.display())))?;
        let file: PcaModelFile = serde_json::from_str(&text)
            .map_err(|e| FeatureError::Model(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn n_pc(&self) -> usize {
        self.n_pc
    }

    pub fn r_pc(&self) -> f64 {
        self.r_pc
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn std(&self) -> &DVector<f64> {
        &self.std
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn principal_eigenvalues(&self) -> DVector<f64> {
        self.eigenvalues.rows(0, self.n_pc).into_owned()
    }

    pub fn residual_eigenvalues(&self) -> DVector<f64> {
        self.eigenvalues
            .rows(self.n_pc, self.n_vars() - self.n_pc)
            .into_owned()
    }

    /// P: n x k.
    pub fn principal_loadings(&self) -> DMatrix<f64> {
        self.loadings.columns(0, self.n_pc).into_owned()
    }

    /// P-tilde: n x (n - k).
    pub fn residual_loadings(&self) -> DMatrix<f64> {
        self.loadings
            .columns(self.n_pc, self.n_vars() - self.n_pc)
            .into_owned()
    }

    /// C = P P^T.
    pub fn proj_pc(&self) -> &DMatrix<f64> {
        &self.proj_pc
    }

    /// C-tilde = P-tilde P-tilde^T.
    pub fn proj_res(&self) -> &DMatrix<f64> {
        &self.proj_res
    }

    /// D = P Lambda^-1 P^T.
    pub fn d_matrix(&self) -> &DMatrix<f64> {
        &self.d_matrix
    }

    /// Share of total variance kept by the principal subspace.
    pub fn retained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues.rows(0, self.n_pc).sum() / total
    }

    pub fn standardize(&self, sample: &DVector<f64>) -> Result<DVector<f64>, FeatureError> {
        if sample.len() != self.n_vars() {
            return Err(FeatureError::Shape(format!(
                "sample has {} values, model expects {}",
                sample.len(),
                self.n_vars()
            )));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite("sample".into()));
        }
        Ok(sample.zip_zip_map(&self.mean, &self.std, |x, m, s| (x - m) / s))
    }

    /// Squared prediction error x^T C-tilde x of the standardized sample.
    pub fn spe(&self, sample: &DVector<f64>) -> Result<f64, FeatureError> {
        let z = self.standardize(sample)?;
        Ok(z.dot(&(&self.proj_res * &z)).max(0.0))
    }

    /// Hotelling statistic x^T D x of the standardized sample.
    pub fn t2(&self, sample: &DVector<f64>) -> Result<f64, FeatureError> {
        let z = self.standardize(sample)?;
        Ok(z.dot(&(&self.d_matrix * &z)).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(seed: u64, m: usize, n: usize) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let raw = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cols = (0..n).map(|j| format!("c{j}")).collect();
        DataMatrix::new(cols, raw * mix).unwrap()
    }

    #[test]
    fn independent_pair_keeps_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..20000)
            .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let d = DataMatrix::from_rows(vec!["a".into(), "b".into()], &rows).unwrap();
        let model = PcaModel::fit(&d, 0.5).unwrap();
        assert_eq!(model.n_pc(), 1);
        let sum = model.proj_pc() + model.proj_res();
        assert!((sum - DMatrix::<f64>::identity(2, 2)).amax() <= 1e-8);
    }

    #[test]
    fn constant_column_and_bad_params_are_rejected() {
        let d = DataMatrix::from_rows(
            vec!["a".into(), "b".into()],
            &[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
        )
        .unwrap();
        assert!(matches!(
            PcaModel::fit(&d, 0.5),
            Err(FeatureError::ConstantColumn(c)) if c == "b"
        ));
        let d = random_data(1, 10, 3);
        assert!(PcaModel::fit(&d, 0.0).is_err());
        assert!(PcaModel::fit(&d, 1.5).is_err());
        let one = DataMatrix::from_rows(vec!["a".into(), "b".into()], &[vec![1.0, 2.0]]).unwrap();
        assert!(PcaModel::fit(&one, 0.5).is_err());
    }

    #[test]
    fn eigen_sorted_and_sign_convention() {
        let model = PcaModel::fit(&random_data(5, 200, 6), 0.7).unwrap();
        let ev = model.eigenvalues();
        assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(ev.iter().all(|&l| l >= -1e-10));
        let all = model.to_file().loadings.to_matrix().unwrap();
        for col in all.column_iter() {
            let big = col.iter().copied().fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn mean_sample_has_zero_statistics() {
        let model = PcaModel::fit(&random_data(9, 100, 5), 0.6).unwrap();
        let mean = model.mean().clone();
        assert!(model.spe(&mean).unwrap().abs() <= 1e-12);
        assert!(model.t2(&mean).unwrap().abs() <= 1e-12);
        assert!(model.spe(&DVector::zeros(4)).is_err());
        let mut bad = mean.clone();
        bad[0] = f64::INFINITY;
        assert!(model.spe(&bad).is_err());
    }

    #[test]
    fn first_direction_scaled_by_root_lambda_has_unit_t2() {
        let model = PcaModel::fit(&random_data(11, 300, 5), 0.5).unwrap();
        let p1 = model.principal_loadings().column(0).into_owned();
        let z = p1 * model.eigenvalues()[0].sqrt();
        let x = z.component_mul(model.std()) + model.mean();
        assert!((model.t2(&x).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let model = PcaModel::fit(&random_data(2, 50, 4), 0.8).unwrap();
        let text = serde_json::to_string(&model.to_file()).unwrap();
        let back = PcaModel::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.to_file(), model.to_file());
        assert_eq!(back.proj_res(), model.proj_res());
    }

    #[test]
    fn fit_is_deterministic() {
        let d = random_data(4, 80, 7);
        let a = serde_json::to_string(&PcaModel::fit(&d, 0.5).unwrap().to_file()).unwrap();
        let b = serde_json::to_string(&PcaModel::fit(&d, 0.5).unwrap().to_file()).unwrap();
        assert_eq!(a, b);
    }
}
