//! Quaternion algebra.
//!
//! Serves as the ground truth that PHM layers are checked against: the
//! Hamilton product, its 4×4 left-multiplication matrix, and the four
//! constant matrices that decompose that matrix into Kronecker products.

use std::ops::{Add, Mul};

use crate::tensor::Tensor;

/// `r + x·i + y·j + z·k`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Quaternion {
    pub r: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(r: f64, x: f64, y: f64, z: f64) -> Self {
        Self { r, x, y, z }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn scale(self, alpha: f64) -> Quaternion {
        Quaternion::new(alpha * self.r, alpha * self.x, alpha * self.y, alpha * self.z)
    }

    /// Hamilton product `self ⊗ p`.
    pub fn hamilton(self, p: Quaternion) -> Quaternion {
        let q = self;
        Quaternion::new(
            q.r * p.r - q.x * p.x - q.y * p.y - q.z * p.z,
            q.x * p.r + q.r * p.x - q.z * p.y + q.y * p.z,
            q.y * p.r + q.z * p.x + q.r * p.y - q.x * p.z,
            q.z * p.r - q.y * p.x + q.x * p.y + q.r * p.z,
        )
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Rotation matrix of a unit quaternion, row-major 3×3.
    pub fn rotation_matrix(self) -> [[f64; 3]; 3] {
        let Quaternion { r, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - r * z),
                2.0 * (x * z + r * y),
            ],
            [
                2.0 * (x * y + r * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - r * x),
            ],
            [
                2.0 * (x * z - r * y),
                2.0 * (y * z + r * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

impl Add for Quaternion {
    type Output = Quaternion;

    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::new(self.r + rhs.r, self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        self.hamilton(rhs)
    }
}

pub fn quat_add(q: Quaternion, p: Quaternion) -> Quaternion {
    q + p
}

pub fn quat_scale(alpha: f64, q: Quaternion) -> Quaternion {
    q.scale(alpha)
}

pub fn hamilton(q: Quaternion, p: Quaternion) -> Quaternion {
    q.hamilton(p)
}

/// The 4×4 matrix `M(q)` with `M(q) · [p_r, p_x, p_y, p_z]ᵀ = q ⊗ p`.
pub fn hamilton_matrix(q: Quaternion) -> Tensor {
    let Quaternion { r, x, y, z } = q;
    let data = vec![
        r, -x, -y, -z, //
        x, r, -z, y, //
        y, z, r, -x, //
        z, -y, x, r,
    ];
    Tensor::new(vec![4, 4], data).expect("static shape")
}

/// Rule matrices `A₁..A₄` with `Σᵢ Aᵢ ⊗ [qᵢ] = M(q)` for `q = (r, x, y, z)`.
#[rustfmt::skip]
pub const HAMILTON_KRON_BASIS: [[[f64; 4]; 4]; 4] = [
    [[1.0, 0.0, 0.0, 0.0],
     [0.0, 1.0, 0.0, 0.0],
     [0.0, 0.0, 1.0, 0.0],
     [0.0, 0.0, 0.0, 1.0]],
    [[0.0, -1.0, 0.0, 0.0],
     [1.0, 0.0, 0.0, 0.0],
     [0.0, 0.0, 0.0, -1.0],
     [0.0, 0.0, 1.0, 0.0]],
    [[0.0, 0.0, -1.0, 0.0],
     [0.0, 0.0, 0.0, 1.0],
     [1.0, 0.0, 0.0, 0.0],
     [0.0, -1.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0, -1.0],
     [0.0, 0.0, -1.0, 0.0],
     [0.0, 1.0, 0.0, 0.0],
     [1.0, 0.0, 0.0, 0.0]],
];

pub fn basis_to_tensors(basis: &[[[f64; 4]; 4]; 4]) -> Vec<Tensor> {
    basis
        .iter()
        .map(|m| Tensor::new(vec![4, 4], m.concat()).expect("static shape"))
        .collect()
}

pub fn hamilton_kron_basis() -> Vec<Tensor> {
    basis_to_tensors(&HAMILTON_KRON_BASIS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    fn close(a: Quaternion, b: Quaternion, tol: f64) -> bool {
        a.to_array()
            .iter()
            .zip(b.to_array())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn addition_and_scaling() {
        let q = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(quat_add(q, Quaternion::default()), q);
        let ones = Quaternion::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(ones + ones, Quaternion::new(2.0, 2.0, 2.0, 2.0));
        assert_eq!(quat_scale(0.0, q), Quaternion::default());
        assert_eq!(quat_scale(1.0, q), q);
        assert_eq!(quat_scale(2.0, q), Quaternion::new(2.0, 4.0, 6.0, 8.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b) = (random_quat(&mut rng), random_quat(&mut rng));
            assert_eq!(a + b, b + a);
        }
    }

    #[test]
    fn unit_rules() {
        let (one, i, j, k) = (Quaternion::ONE, Quaternion::I, Quaternion::J, Quaternion::K);
        let minus_one = one.scale(-1.0);
        assert_eq!(one * Quaternion::new(5.0, 6.0, 7.0, 8.0), Quaternion::new(5.0, 6.0, 7.0, 8.0));
        assert_eq!(i * j, k);
        assert_eq!(j * i, k.scale(-1.0));
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        assert_eq!(k * j, i.scale(-1.0));
        assert_eq!(i * k, j.scale(-1.0));
        assert_eq!(i * i, minus_one);
        assert_eq!(j * j, minus_one);
        assert_eq!(k * k, minus_one);
        assert_eq!(i * j * k, minus_one);
        assert_ne!(i * j, j * i);
    }

    #[test]
    fn hand_expanded_product() {
        let q = Quaternion::new(1.0, 2.0, 3.0, 4.0);
        let p = Quaternion::new(5.0, 6.0, 7.0, 8.0);
        assert_eq!(q * p, Quaternion::new(-60.0, 12.0, 30.0, 24.0));
    }

    #[test]
    fn associative_and_distributive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (a, b, c) = (random_quat(&mut rng), random_quat(&mut rng), random_quat(&mut rng));
            assert!(close((a * b) * c, a * (b * c), 1e-12));
            assert!(close(a * (b + c), a * b + a * c, 1e-12));
            assert!(close((a + b) * c, a * c + b * c, 1e-12));
        }
    }

    #[test]
    fn matrix_form_matches_product() {
        assert_eq!(hamilton_matrix(Quaternion::ONE), Tensor::identity(4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (q, p) = (random_quat(&mut rng), random_quat(&mut rng));
            let pv = Tensor::new(vec![4, 1], p.to_array().to_vec()).unwrap();
            let got = hamilton_matrix(q).matmul(&pv).unwrap();
            let want = (q * p).to_array();
            for (g, w) in got.data().iter().zip(want) {
                assert!((g - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matrix_sign_layout_for_i() {
        let m = hamilton_matrix(Quaternion::I);
        #[rustfmt::skip]
        let want = [
            0.0, -1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, -1.0,
            0.0, 0.0, 1.0, 0.0,
        ];
        assert_eq!(m.data(), &want);
    }

    #[test]
    fn matrix_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (q, p) = (random_quat(&mut rng), random_quat(&mut rng));
            let lhs = hamilton_matrix(q + p);
            let rhs = hamilton_matrix(q).add(&hamilton_matrix(p)).unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn kron_basis_reconstructs_matrix() {
        let basis = hamilton_kron_basis();
        assert_eq!(basis[0], Tensor::identity(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let mut sum = Tensor::zeros(&[4, 4]);
            for (a, qi) in basis.iter().zip(q.to_array()) {
                let term = a.kron(&Tensor::new(vec![1, 1], vec![qi]).unwrap()).unwrap();
                sum = sum.add(&term).unwrap();
            }
            assert_eq!(sum, hamilton_matrix(q));
        }
    }

    #[test]
    fn kron_basis_is_orthogonal() {
        for a in hamilton_kron_basis() {
            assert_eq!(a.transpose().unwrap().matmul(&a).unwrap(), Tensor::identity(4));
        }
    }

    #[test]
    fn rotation_from_unit_quaternion_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_quat(&mut rng);
        let q = q.scale(1.0 / q.norm());
        let r = q.rotation_matrix();
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        assert!((det - 1.0).abs() < 1e-12);
    }
}
