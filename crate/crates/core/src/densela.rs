//! Dense linear algebra for the R factor.
//!
//! The kernel is a plain column-by-column Householder QR that keeps only the
//! triangular factor. Every factor leaving this module is in sign-canonical
//! form (nonnegative diagonal), which makes the factor of a full-rank matrix
//! unique. Two processes factoring the same bytes therefore hold the same
//! bytes afterwards.
//!
//! Verification goes through the gram identity `AᵀA = RᵀR`, which holds for
//! any QR factorization regardless of row order or reflector signs.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, data)
    }

    /// Uniform entries in `[-1, 1]` drawn from ChaCha8 seeded with `seed`.
    ///
    /// Entries are generated in row-major order, so a given `(rows, cols, seed)`
    /// always produces the same bytes.
    pub fn random(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    /// Copy of rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.rows {
            return Err(Error::InvalidShape(format!(
                "row block {start}..{} out of range for {} rows",
                start + count,
                self.rows
            )));
        }
        let data = self.data[start * self.cols..(start + count) * self.cols].to_vec();
        Self::new(count, self.cols, data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bitwise comparison of shape and entries.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Reads a headerless CSV matrix, one row per line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("csv line {}: {field:?}: {e}", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// Writes the matrix as headerless CSV using shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        for row in self.data.chunks(self.cols) {
            wtr.write_record(row.iter().map(f64::to_string))
                .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        }
        wtr.flush()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }
}

/// Square upper-triangular factor with exact zeros below the diagonal and a
/// nonnegative diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularFactor {
    mat: Matrix,
}

impl TriangularFactor {
    pub fn n(&self) -> usize {
        self.mat.cols
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.mat.bit_eq(&other.mat)
    }
}

impl TryFrom<Matrix> for TriangularFactor {
    type Error = Error;

    /// Accepts a matrix that is already square, upper triangular and sign-canonical.
    fn try_from(mat: Matrix) -> Result<Self> {
        check_upper_triangular(&mat)?;
        if let Some(i) = (0..mat.cols).find(|&i| mat.get(i, i) < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diagonal entry {i} is negative"
            )));
        }
        Ok(Self { mat })
    }
}

fn check_upper_triangular(mat: &Matrix) -> Result<()> {
    if mat.rows != mat.cols {
        return Err(Error::InvalidArgument(format!(
            "triangular factor must be square, got {}x{}",
            mat.rows, mat.cols
        )));
    }
    for i in 1..mat.rows {
        for j in 0..i {
            if mat.get(i, j) != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) below the diagonal is nonzero"
                )));
            }
        }
    }
    Ok(())
}

/// Householder QR of a tall matrix, returning only the sign-canonical `R`.
///
/// Reflectors are built with the sign of the pivot to avoid cancellation and
/// are discarded after being applied. Columns that are already zero below
/// the diagonal are skipped, so rank-deficient input is accepted.
pub fn householder_qr_r(a: &Matrix) -> Result<TriangularFactor> {
    let (m, n) = (a.rows, a.cols);
    if m < n {
        return Err(Error::InvalidShape(format!(
            "QR needs rows >= cols, got {m}x{n}"
        )));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }

    let mut w = a.data.clone();
    let mut v = vec![0.0; m];
    for k in 0..n {
        let norm = (k..m).map(|i| w[i * n + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let pivot = w[k * n + k];
        let beta = if pivot >= 0.0 { -norm } else { norm };

        v[k] = pivot - beta;
        for i in k + 1..m {
            v[i] = w[i * n + k];
        }
        let vtv: f64 = (k..m).map(|i| v[i] * v[i]).sum();
        if vtv == 0.0 {
            continue;
        }

        for j in k + 1..n {
            let dot: f64 = (k..m).map(|i| v[i] * w[i * n + j]).sum();
            let scale = 2.0 * dot / vtv;
            for i in k..m {
                w[i * n + j] -= scale * v[i];
            }
        }
        w[k * n + k] = beta;
        for i in k + 1..m {
            w[i * n + k] = 0.0;
        }
    }

    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            r[i * n + j] = w[i * n + j];
        }
    }
    canonicalize_sign(&Matrix::new(n, n, r)?)
}

/// Stacks `top` above `bottom` into a `2n x n` matrix.
pub fn stack(top: &TriangularFactor, bottom: &TriangularFactor) -> Result<Matrix> {
    if top.n() != bottom.n() {
        return Err(Error::InvalidArgument(format!(
            "cannot stack {0}x{0} on {1}x{1}",
            top.n(),
            bottom.n()
        )));
    }
    let n = top.n();
    let mut data = Vec::with_capacity(2 * n * n);
    data.extend_from_slice(&top.mat.data);
    data.extend_from_slice(&bottom.mat.data);
    Matrix::new(2 * n, n, data)
}

/// `AᵀA`. Only the upper triangle is accumulated and then mirrored, so the
/// result is exactly symmetric.
pub fn gram(a: &Matrix) -> Matrix {
    let n = a.cols;
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..a.rows).map(|k| a.get(k, i) * a.get(k, j)).sum();
            g[i * n + j] = s;
            g[j * n + i] = s;
        }
    }
    Matrix {
        rows: n,
        cols: n,
        data: g,
    }
}

/// `‖AᵀA − RᵀR‖_F / ‖AᵀA‖_F`, or `‖RᵀR‖_F` when `AᵀA` is zero.
pub fn rel_residual(a: &Matrix, r: &TriangularFactor) -> Result<f64> {
    if a.cols != r.n() {
        return Err(Error::InvalidArgument(format!(
            "A has {} columns but R is {1}x{1}",
            a.cols,
            r.n()
        )));
    }
    let ga = gram(a);
    let gr = gram(r.as_matrix());
    let diff = ga
        .data
        .iter()
        .zip(&gr.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let denom = ga.frobenius_norm();
    if denom == 0.0 {
        Ok(gr.frobenius_norm())
    } else {
        Ok(diff / denom)
    }
}

/// Negates every row whose diagonal entry is negative.
///
/// Signed zeros are normalized to `+0.0` so equal factors are also bitwise equal.
pub fn canonicalize_sign(r: &Matrix) -> Result<TriangularFactor> {
    check_upper_triangular(r)?;
    let n = r.cols;
    let mut data = r.data.clone();
    for i in 0..n {
        let row = &mut data[i * n..(i + 1) * n];
        if row[i] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        row.iter_mut().filter(|v| **v == 0.0).for_each(|v| *v = 0.0);
    }
    Ok(TriangularFactor {
        mat: Matrix {
            rows: n,
            cols: n,
            data,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn random_is_in_range_and_deterministic() {
        let one = Matrix::random(1, 1, 99).unwrap();
        assert!((-1.0..=1.0).contains(&one.get(0, 0)));

        let a = Matrix::random(8, 3, 42).unwrap();
        let b = Matrix::random(8, 3, 42).unwrap();
        assert!(a.bit_eq(&b));

        let c = Matrix::random(8, 3, 43).unwrap();
        assert!(a.as_slice().iter().zip(c.as_slice()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_dimensions_are_rejected() {
        assert!(matches!(
            Matrix::random(0, 3, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            Matrix::random(3, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            Matrix::zeros(0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn construction_validates_length_and_finiteness() {
        assert!(matches!(
            Matrix::new(2, 2, vec![0.0; 3]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            Matrix::new(1, 1, vec![f64::INFINITY]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn qr_of_identity_is_identity() {
        let i3 = Matrix::identity(3).unwrap();
        let r = householder_qr_r(&i3).unwrap();
        assert!(r.as_matrix().bit_eq(&i3));
    }

    #[test]
    fn qr_of_single_column_is_its_norm() {
        let r = householder_qr_r(&col(&[3.0, 4.0])).unwrap();
        assert_eq!(r.as_matrix().as_slice(), &[5.0]);
    }

    #[test]
    fn qr_rejects_wide_and_non_finite() {
        let wide = Matrix::zeros(2, 3).unwrap();
        assert!(matches!(
            householder_qr_r(&wide),
            Err(Error::InvalidShape(_))
        ));
        let bad = Matrix {
            rows: 2,
            cols: 1,
            data: vec![1.0, f64::NAN],
        };
        assert!(matches!(
            householder_qr_r(&bad),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn qr_random_block_satisfies_gram_identity() {
        let a = Matrix::random(64, 4, 7).unwrap();
        let r = householder_qr_r(&a).unwrap();
        let res = rel_residual(&a, &r).unwrap();
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn qr_accepts_rank_deficient_input() {
        // Second column is twice the first.
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let r = householder_qr_r(&a).unwrap();
        assert!(rel_residual(&a, &r).unwrap() <= 1e-12);
        let zero = Matrix::zeros(4, 2).unwrap();
        let r0 = householder_qr_r(&zero).unwrap();
        assert_eq!(r0.as_matrix().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn stack_places_top_first() {
        let i2 = TriangularFactor::try_from(Matrix::identity(2).unwrap()).unwrap();
        let s = stack(&i2, &i2).unwrap();
        assert_eq!(s.rows(), 4);
        assert_eq!(s.as_slice(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let r = householder_qr_r(&s).unwrap();
        assert_eq!(r.n(), 2);
    }

    #[test]
    fn stack_rejects_mismatched_sizes() {
        let a = TriangularFactor::try_from(Matrix::identity(2).unwrap()).unwrap();
        let b = TriangularFactor::try_from(Matrix::identity(3).unwrap()).unwrap();
        assert!(matches!(stack(&a, &b), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stacked_gram_is_sum_of_grams() {
        let r0 = householder_qr_r(&Matrix::random(8, 2, 1).unwrap()).unwrap();
        let r1 = householder_qr_r(&Matrix::random(8, 2, 2).unwrap()).unwrap();
        let g = gram(&stack(&r0, &r1).unwrap());

        // Direct arithmetic on the entries, independent of `gram`.
        let (a, b) = (r0.as_matrix(), r1.as_matrix());
        for i in 0..2 {
            for j in 0..2 {
                let expected: f64 = (0..2)
                    .map(|k| a.get(k, i) * a.get(k, j) + b.get(k, i) * b.get(k, j))
                    .sum();
                let got = g.get(i, j);
                assert!((got - expected).abs() <= 1e-13 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gram_examples() {
        let i3 = Matrix::identity(3).unwrap();
        assert!(gram(&i3).bit_eq(&i3));
        assert_eq!(gram(&col(&[3.0, 4.0])).as_slice(), &[25.0]);

        let g = gram(&Matrix::random(16, 3, 5).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn residual_examples() {
        let i3 = Matrix::identity(3).unwrap();
        let r = TriangularFactor::try_from(i3.clone()).unwrap();
        assert_eq!(rel_residual(&i3, &r).unwrap(), 0.0);

        let five = TriangularFactor::try_from(col(&[5.0])).unwrap();
        assert_eq!(rel_residual(&col(&[3.0, 4.0]), &five).unwrap(), 0.0);

        assert!(matches!(
            rel_residual(&Matrix::identity(2).unwrap(), &five),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn residual_of_zero_matrix_falls_back_to_r_norm() {
        let zero = Matrix::zeros(3, 2).unwrap();
        let r = TriangularFactor::try_from(Matrix::from_rows(&[[3.0, 0.0], [0.0, 4.0]]).unwrap())
            .unwrap();
        // RᵀR = diag(9, 16)
        assert_eq!(rel_residual(&zero, &r).unwrap(), (81.0f64 + 256.0).sqrt());
    }

    #[test]
    fn canonicalize_negates_rows() {
        let d = Matrix::from_rows(&[[1.0, 3.0], [0.0, -2.0]]).unwrap();
        let c = canonicalize_sign(&d).unwrap();
        assert_eq!(c.as_matrix().as_slice(), &[1.0, 3.0, 0.0, 2.0]);

        let again = canonicalize_sign(c.as_matrix()).unwrap();
        assert!(again.bit_eq(&c));
    }

    #[test]
    fn canonicalize_rejects_non_triangular() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            canonicalize_sign(&m),
            Err(Error::InvalidArgument(_))
        ));
        let rect = Matrix::zeros(3, 2).unwrap();
        assert!(matches!(
            canonicalize_sign(&rect),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn try_from_rejects_negative_diagonal() {
        let m = Matrix::from_rows(&[[-1.0]]).unwrap();
        assert!(TriangularFactor::try_from(m).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let a = Matrix::random(5, 3, 11).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(Matrix::read_csv(buf.as_slice()).unwrap().bit_eq(&a));
    }

    #[test]
    fn csv_rejects_ragged_and_garbage() {
        assert!(Matrix::read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(Matrix::read_csv("1,abc\n".as_bytes()).is_err());
        assert!(Matrix::read_csv("".as_bytes()).is_err());
    }

    fn upper_triangular() -> impl Strategy<Value = Matrix> {
        (1usize..6).prop_flat_map(|n| {
            proptest::collection::vec(-10.0f64..10.0, n * n).prop_map(move |mut d| {
                for i in 0..n {
                    for j in 0..i {
                        d[i * n + j] = 0.0;
                    }
                }
                Matrix::new(n, n, d).unwrap()
            })
        })
    }

    fn tall() -> impl Strategy<Value = Matrix> {
        (1usize..5, 0usize..20).prop_flat_map(|(n, extra)| {
            let m = n + extra;
            proptest::collection::vec(-1.0f64..1.0, m * n)
                .prop_map(move |d| Matrix::new(m, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent_and_preserves_gram(r in upper_triangular()) {
            let once = canonicalize_sign(&r).unwrap();
            let twice = canonicalize_sign(once.as_matrix()).unwrap();
            prop_assert!(twice.bit_eq(&once));
            prop_assert!((0..once.n()).all(|i| once.as_matrix().get(i, i) >= 0.0));
            let (g0, g1) = (gram(&r), gram(once.as_matrix()));
            for (x, y) in g0.as_slice().iter().zip(g1.as_slice()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn qr_holds_gram_identity_and_triangularity(a in tall()) {
            let r = householder_qr_r(&a).unwrap();
            let m = r.as_matrix();
            for i in 0..r.n() {
                prop_assert!(m.get(i, i) >= 0.0);
                for j in 0..i {
                    prop_assert_eq!(m.get(i, j).to_bits(), 0.0f64.to_bits());
                }
            }
            prop_assert!(rel_residual(&a, &r).unwrap() <= 1e-12);
            prop_assert!(householder_qr_r(&a).unwrap().bit_eq(&r));
        }
    }
}
