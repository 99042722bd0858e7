//! Random kernels and directions for tests, benches and the identity check.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernel::{KernelMatrix, SymmetricDirection};

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Dense Wishart-type kernel `A A^T / n + shift I`; every eigenvalue exceeds
/// `shift` and off-diagonal entries are almost surely nonzero.
pub fn random_kernel<R: Rng + ?Sized>(n: usize, shift: f64, rng: &mut R) -> KernelMatrix {
    let a = gaussian(n, n, rng);
    let m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * shift;
    KernelMatrix::new((&m + m.transpose()) * 0.5).expect("shifted Gram matrix is positive definite")
}

/// Block-diagonal kernel whose blocks are independent dense random kernels.
pub fn random_block_kernel<R: Rng + ?Sized>(sizes: &[usize], shift: f64, rng: &mut R) -> KernelMatrix {
    let blocks: Vec<KernelMatrix> = sizes.iter().map(|&k| random_kernel(k, shift, rng)).collect();
    KernelMatrix::block_diagonal(&blocks).expect("blocks are positive definite")
}

/// Symmetric direction with unit Frobenius norm.
pub fn random_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SymmetricDirection {
    let a = gaussian(n, n, rng);
    SymmetricDirection::new((&a + a.transpose()) * 0.5)
        .expect("symmetrized matrix")
        .normalized()
}
