use nalgebra::{DMatrix, DVector};

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
pub(crate) struct Eigen {
    pub values: DVector<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: DMatrix<f64>,
}

pub(crate) fn symmetric_eigen(m: DMatrix<f64>) -> Eigen {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order for exact ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Eigen { values, vectors }
}
