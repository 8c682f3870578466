//! Expansion of a 4-DoF state into a 16-DoF one where DoFs 5 to 16 are fixed
//! nonlinear functions of the first four.

use ndarray::{Array1, Array2};

/// Value, gradient and Hessian of one expansion formula.
type Formula = fn(&[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]);

fn f5(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[1][1] = q[1].cos();
    (q[2] - q[1].cos(), [0.0, q[1].sin(), 1.0, 0.0], h)
}

fn f6(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[1][1] = -0.1 * q[1].sin();
    (q[0] + 0.1 * q[1].sin(), [1.0, 0.1 * q[1].cos(), 0.0, 0.0], h)
}

fn f7(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let (s, c) = q[1].sin_cos();
    let mut h = [[0.0; 4]; 4];
    h[1][1] = -q[3] * c;
    h[1][3] = -s;
    h[3][1] = -s;
    (q[3] * c, [0.0, -q[3] * s, 0.0, c], h)
}

fn f8(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[2][2] = 2.0;
    (q[0] + q[2] * q[2], [1.0, 0.0, 2.0 * q[2], 0.0], h)
}

fn f9(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[1][1] = -1.5 * q[1].sin();
    (1.5 * q[1].sin(), [0.0, 1.5 * q[1].cos(), 0.0, 0.0], h)
}

fn f10(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[0][3] = -1.0;
    h[3][0] = -1.0;
    (-q[3] * q[0], [-q[3], 0.0, 0.0, -q[0]], h)
}

fn f11(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[0][0] = -q[0].sin();
    (q[0].sin(), [q[0].cos(), 0.0, 0.0, 0.0], h)
}

fn f12(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[2][3] = 0.4;
    h[3][2] = 0.4;
    (0.4 * q[2] * q[3], [0.0, 0.0, 0.4 * q[3], 0.4 * q[2]], h)
}

fn f13(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[3][3] = -4.0;
    (-0.9 * q[0] - q[1] + q[2] - 2.0 * q[3] * q[3], [-0.9, -1.0, 1.0, -4.0 * q[3]], h)
}

fn f14(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[2][2] = 3.0 * q[2].sin();
    (-3.0 * q[2].sin(), [0.0, 0.0, -3.0 * q[2].cos(), 0.0], h)
}

fn f15(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[2][2] = -4.0;
    (-2.0 * q[2] * q[2], [0.0, 0.0, -4.0 * q[2], 0.0], h)
}

fn f16(q: &[f64; 4]) -> (f64, [f64; 4], [[f64; 4]; 4]) {
    let mut h = [[0.0; 4]; 4];
    h[0][0] = -1.8;
    (-0.9 * q[0] * q[0], [-1.8 * q[0], 0.0, 0.0, 0.0], h)
}

const FORMULAS: [Formula; 12] = [f5, f6, f7, f8, f9, f10, f11, f12, f13, f14, f15, f16];

/// Values of DoFs 5 to 16.
pub fn coupled_positions(q: &[f64; 4]) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (o, f) in out.iter_mut().zip(FORMULAS) {
        *o = f(q).0;
    }
    out
}

/// Expands position, velocity and acceleration; derivatives follow from the
/// chain rule, `q̈_k = ∇f_k·q̈ + q̇ᵀ∇²f_k q̇`.
pub fn coupled16_expand(q: &[f64; 4], dq: &[f64; 4], ddq: &[f64; 4]) -> ([f64; 16], [f64; 16], [f64; 16]) {
    let mut out = ([0.0; 16], [0.0; 16], [0.0; 16]);
    out.0[..4].copy_from_slice(q);
    out.1[..4].copy_from_slice(dq);
    out.2[..4].copy_from_slice(ddq);
    for (k, f) in FORMULAS.iter().enumerate() {
        let (v, g, h) = f(q);
        let mut curv = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                curv += dq[i] * h[i][j] * dq[j];
            }
        }
        out.0[4 + k] = v;
        out.1[4 + k] = (0..4).map(|i| g[i] * dq[i]).sum();
        out.2[4 + k] = (0..4).map(|i| g[i] * ddq[i]).sum::<f64>() + curv;
    }
    out
}

/// Row-wise expansion of `K×4` blocks into `K×16`.
pub fn expand_rows(q: &Array2<f64>, dq: &Array2<f64>, ddq: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let k = q.nrows();
    let mut out = (Array2::zeros((k, 16)), Array2::zeros((k, 16)), Array2::zeros((k, 16)));
    let arr = |a: &Array2<f64>, r: usize| -> [f64; 4] { [a[[r, 0]], a[[r, 1]], a[[r, 2]], a[[r, 3]]] };
    for r in 0..k {
        let (a, b, c) = coupled16_expand(&arr(q, r), &arr(dq, r), &arr(ddq, r));
        out.0.row_mut(r).assign(&Array1::from(a.to_vec()));
        out.1.row_mut(r).assign(&Array1::from(b.to_vec()));
        out.2.row_mut(r).assign(&Array1::from(c.to_vec()));
    }
    out
}
