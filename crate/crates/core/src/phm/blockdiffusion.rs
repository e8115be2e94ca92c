//! Alternative construction of `H` from diffusion matrices `Bᵢ` (`n×n`) and
//! partitioned weight blocks `Tⱼ` (`n × k/n`, `j < d/n`).
//!
//! Column `i·(d/n) + j` of `H` is `ψ(Bᵢ Tⱼ)`, where `ψ` flattens row by row.
//! Any Kronecker-sum layer maps onto this form through
//! `Bᵢ[m, l] = A_l[m, i]` and `Tⱼ[l, :] = S_l[:, j]ᵀ`.

use crate::error::{dim_err, PhmError, Result};
use crate::phm::{check_divisible, PhmParams};
use crate::tensor::Tensor;

/// Diffusion matrices that reproduce the Hamilton product when every `Tⱼ`
/// is the column `(Q_r, Q_x, Q_y, Q_z)ᵀ`.
#[rustfmt::skip]
pub const HAMILTON_DIFFUSION_BASIS: [[[f64; 4]; 4]; 4] = [
    [[1.0, 0.0, 0.0, 0.0],
     [0.0, 1.0, 0.0, 0.0],
     [0.0, 0.0, 1.0, 0.0],
     [0.0, 0.0, 0.0, 1.0]],
    [[0.0, -1.0, 0.0, 0.0],
     [1.0, 0.0, 0.0, 0.0],
     [0.0, 0.0, 0.0, 1.0],
     [0.0, 0.0, -1.0, 0.0]],
    [[0.0, 0.0, -1.0, 0.0],
     [0.0, 0.0, 0.0, -1.0],
     [1.0, 0.0, 0.0, 0.0],
     [0.0, 1.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0, -1.0],
     [0.0, 0.0, 1.0, 0.0],
     [0.0, -1.0, 0.0, 0.0],
     [1.0, 0.0, 0.0, 0.0]],
];

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiffusionParams {
    n: usize,
    d: usize,
    k: usize,
    diffusion: Vec<Tensor>,
    partitions: Vec<Tensor>,
}

impl BlockDiffusionParams {
    /// `diffusion`: `n` matrices `n×n`; `partitions`: `d/n` matrices `n×(k/n)`.
    pub fn new(diffusion: Vec<Tensor>, partitions: Vec<Tensor>) -> Result<Self> {
        let n = diffusion.len();
        if n == 0 || diffusion.iter().any(|b| b.shape() != [n, n]) {
            return dim_err("diffusion matrices must be n matrices of n×n");
        }
        let Some(first) = partitions.first() else {
            return dim_err("no partition blocks");
        };
        let &[rows, p] = first.shape() else {
            return Err(PhmError::Rank {
                expected: 2,
                actual: first.rank(),
            });
        };
        if rows != n || partitions.iter().any(|t| t.shape() != [n, p]) {
            return dim_err("partition blocks must all be n×(k/n)");
        }
        let (d, k) = (n * partitions.len(), n * p);
        check_divisible(n, d, k)?;
        Ok(Self {
            n,
            d,
            k,
            diffusion,
            partitions,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn diffusion(&self) -> &[Tensor] {
        &self.diffusion
    }

    pub fn partitions(&self) -> &[Tensor] {
        &self.partitions
    }

    /// Learnable scalars excluding bias: `n³ + (d/n)·n·(k/n)`.
    pub fn param_count(&self) -> usize {
        self.diffusion.iter().chain(&self.partitions).map(Tensor::numel).sum()
    }
}

/// Row-by-row flattening of a matrix into a vector.
pub fn psi_flatten(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(PhmError::Rank {
            expected: 2,
            actual: x.rank(),
        });
    }
    Ok(Tensor::vector(x.data().to_vec()))
}

/// `H = [s(B₁); …; s(Bₙ)]` with `s(Bᵢ) = [ψ(Bᵢ T₁); …; ψ(Bᵢ T_{d/n})]`,
/// `;` joining columns.
pub fn build_h_blockdiffusion(p: &BlockDiffusionParams) -> Result<Tensor> {
    let (k, d) = (p.k, p.d);
    let per = d / p.n;
    let mut h = vec![0.0; k * d];
    for (i, b) in p.diffusion.iter().enumerate() {
        for (j, t) in p.partitions.iter().enumerate() {
            let col = psi_flatten(&b.matmul(t)?)?;
            let c = i * per + j;
            for (row, v) in col.data().iter().enumerate() {
                h[row * d + c] = *v;
            }
        }
    }
    Tensor::new(vec![k, d], h)
}

/// Re-expresses a Kronecker-sum layer as diffusion matrices and partitions
/// with the same `H`.
pub fn kron_to_block_mapping(p: &PhmParams) -> BlockDiffusionParams {
    let kernel = p.dims();
    let (n, rows, cols) = (kernel.n, kernel.p, kernel.q);
    let rule = p.rule().snapshot();
    let weights = p.weights().snapshot();
    let (a, s) = (rule.data(), weights.data());

    let diffusion = (0..n)
        .map(|i| {
            let mut b = vec![0.0; n * n];
            for m in 0..n {
                for l in 0..n {
                    b[m * n + l] = a[l * n * n + m * n + i];
                }
            }
            Tensor::new(vec![n, n], b).expect("n×n")
        })
        .collect();
    let partitions = (0..cols)
        .map(|j| {
            let mut t = vec![0.0; n * rows];
            for l in 0..n {
                for r in 0..rows {
                    t[l * rows + r] = s[l * rows * cols + r * cols + j];
                }
            }
            Tensor::new(vec![n, rows], t).expect("n×(k/n)")
        })
        .collect();
    BlockDiffusionParams {
        n,
        d: p.d(),
        k: p.k(),
        diffusion,
        partitions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercomplex::{basis_to_tensors, hamilton_matrix, Quaternion, HAMILTON_KRON_BASIS};
    use crate::phm::phm_init;

    #[test]
    fn psi_is_row_major() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(psi_flatten(&x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let row = Tensor::from_rows(&[vec![5.0, 6.0, 7.0]]).unwrap();
        assert_eq!(psi_flatten(&row).unwrap().data(), &[5.0, 6.0, 7.0]);
        assert!(psi_flatten(&Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn psi_of_product_has_length_k() {
        let (n, k) = (2, 6);
        let b = Tensor::identity(n);
        let t = Tensor::zeros(&[n, k / n]);
        assert_eq!(psi_flatten(&b.matmul(&t).unwrap()).unwrap().numel(), k);
    }

    #[test]
    fn partitioned_layout_shape() {
        let bd = kron_to_block_mapping(&phm_init(2, 8, 6, 4).unwrap());
        assert_eq!(bd.partitions().len(), 4);
        assert_eq!(build_h_blockdiffusion(&bd).unwrap().shape(), &[6, 8]);
        assert_eq!(bd.param_count(), 6 * 8 / 2 + 8);
    }

    #[test]
    fn single_partition_degenerates_to_scaled_fc() {
        let (d, k) = (3, 2);
        let w = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let scale = 0.5;
        let partitions = (0..d)
            .map(|j| Tensor::new(vec![1, k], vec![w.at(0, j), w.at(1, j)]).unwrap())
            .collect();
        let bd = BlockDiffusionParams::new(vec![Tensor::new(vec![1, 1], vec![scale]).unwrap()], partitions)
            .unwrap();
        assert_eq!(build_h_blockdiffusion(&bd).unwrap(), w.scale(scale));
    }

    #[test]
    fn mapping_single_partition_columns() {
        let p = phm_init(1, 3, 2, 8).unwrap();
        let bd = kron_to_block_mapping(&p);
        assert_eq!(bd.diffusion()[0], p.rule_matrix(0).unwrap());
        let s = p.weight_block(0).unwrap();
        for (j, t) in bd.partitions().iter().enumerate() {
            assert_eq!(t.data(), &[s.at(0, j), s.at(1, j)]);
        }
    }

    #[test]
    fn hamilton_diffusion_constants() {
        let q = Quaternion::new(0.9, -0.1, 0.4, -2.0);
        let t = Tensor::new(vec![4, 1], q.to_array().to_vec()).unwrap();
        let bd = BlockDiffusionParams::new(basis_to_tensors(&HAMILTON_DIFFUSION_BASIS), vec![t]).unwrap();
        assert_eq!(build_h_blockdiffusion(&bd).unwrap(), hamilton_matrix(q));
    }

    #[test]
    fn mapping_sends_kron_basis_to_diffusion_basis() {
        let blocks = [0.9, -0.1, 0.4, -2.0].map(|c| Tensor::new(vec![1, 1], vec![c]).unwrap());
        let p = PhmParams::from_quaternion(&blocks).unwrap();
        let bd = kron_to_block_mapping(&p);
        assert_eq!(bd.diffusion(), basis_to_tensors(&HAMILTON_DIFFUSION_BASIS).as_slice());
        // B_i[m, l] = A_l[m, i] as a symbolic identity over the constants.
        for i in 0..4 {
            for m in 0..4 {
                for l in 0..4 {
                    assert_eq!(HAMILTON_DIFFUSION_BASIS[i][m][l], HAMILTON_KRON_BASIS[l][m][i]);
                }
            }
        }
        assert_eq!(bd.partitions()[0].data(), &[0.9, -0.1, 0.4, -2.0]);
    }

    #[test]
    fn random_equivalence() {
        let p = phm_init(2, 8, 6, 21).unwrap();
        let bd = kron_to_block_mapping(&p);
        let diff = build_h_blockdiffusion(&bd).unwrap().max_abs_diff(&p.build_h()).unwrap();
        assert!(diff <= 1e-15);
    }
}
