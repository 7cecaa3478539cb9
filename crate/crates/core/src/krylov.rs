//! Matrix-free Krylov solvers in a diagonal-weighted inner product <a,b> = sum w a b.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn wdot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter().zip(a.iter().zip(b.iter())).map(|(w, (a, b))| w * a * b).sum()
}

pub fn wnorm(w: &DVector<f64>, a: &DVector<f64>) -> f64 {
    wdot(w, a, a).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// final relative residual in the weighted norm
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Right-preconditioned restarted GMRES. Stops when ||b - A x||_w <= tol ||b||_w.
pub fn gmres<A, P>(
    mut apply: A,
    precond: P,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    w: &DVector<f64>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<KrylovOutcome>
where
    A: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = wnorm(w, b);
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    if bnorm == 0.0 && x0.is_none() {
        return Ok(KrylovOutcome { x, iterations: 0, residual: 0.0, history: vec![0.0] });
    }
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let restart = restart.max(1);
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = b - apply(&x)?;
        let beta = wnorm(w, &r);
        let rel = beta / scale;
        history.push(rel);
        if rel <= tol {
            return Ok(KrylovOutcome { x, iterations, residual: rel, history });
        }
        if iterations >= max_iter {
            return Err(Error::MaxIterations { solver: "gmres", iterations, residual: rel });
        }
        let mut v: Vec<DVector<f64>> = vec![r / beta];
        let mut z: Vec<DVector<f64>> = Vec::new();
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = beta;
        let mut k = 0;
        while k < restart && iterations < max_iter {
            let zk = precond(&v[k]);
            let mut q = apply(&zk)?;
            z.push(zk);
            // modified Gram-Schmidt, twice for safety
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let c = wdot(w, &q, vj);
                    h[(j, k)] += c;
                    q.axpy(-c, vj, 1.0);
                }
            }
            let hn = wnorm(w, &q);
            h[(k + 1, k)] = hn;
            for j in 0..k {
                let t = cs[j] * h[(j, k)] + sn[j] * h[(j + 1, k)];
                h[(j + 1, k)] = -sn[j] * h[(j, k)] + cs[j] * h[(j + 1, k)];
                h[(j, k)] = t;
            }
            let den = h[(k, k)].hypot(h[(k + 1, k)]);
            cs[k] = h[(k, k)] / den;
            sn[k] = h[(k + 1, k)] / den;
            h[(k, k)] = den;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            let est = g[k].abs() / scale;
            history.push(est);
            if est <= tol * 0.5 || hn <= 1e-14 * beta {
                break;
            }
            v.push(q / hn);
        }
        // back substitution for the k x k triangle
        let mut y = DVector::<f64>::zeros(k);
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[(i, j)] * y[j];
            }
            y[i] = s / h[(i, i)];
        }
        for (j, zj) in z.iter().enumerate().take(k) {
            x.axpy(y[j], zj, 1.0);
        }
    }
}

/// Preconditioned conjugate gradients for a self-adjoint operator in the w-product.
pub fn cg<A, P>(
    mut apply: A,
    precond: P,
    b: &DVector<f64>,
    w: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome>
where
    A: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = wnorm(w, b);
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { x, iterations: 0, residual: 0.0, history: vec![0.0] });
    }
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = wdot(w, &r, &z);
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let curv = wdot(w, &p, &ap);
        if curv <= 0.0 {
            return Err(Error::IndefiniteOperator { iteration: it, curvature: curv / wdot(w, &p, &p) });
        }
        let a = rz / curv;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &ap, 1.0);
        let rel = wnorm(w, &r) / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok(KrylovOutcome { x, iterations: it, residual: rel, history });
        }
        z = precond(&r);
        let rz_new = wdot(w, &r, &z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    let residual = *history.last().unwrap();
    Err(Error::MaxIterations { solver: "cg", iterations: max_iter, residual })
}

/// Largest eigenvalue of a self-adjoint positive semidefinite operator.
pub fn power_iteration<A>(mut apply: A, x0: DVector<f64>, w: &DVector<f64>, rel_tol: f64, max_iter: usize) -> Result<f64>
where
    A: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n0 = wnorm(w, &x0);
    if n0 == 0.0 {
        return Ok(0.0);
    }
    let mut x = x0 / n0;
    let mut lam = 0.0;
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let y = apply(&x)?;
        let new = wdot(w, &x, &y);
        let ny = wnorm(w, &y);
        if ny == 0.0 {
            return Ok(0.0);
        }
        change = (new - lam).abs() / new.abs().max(f64::MIN_POSITIVE);
        lam = new;
        x = y / ny;
        if it > 2 && change <= rel_tol {
            return Ok(lam);
        }
    }
    Err(Error::PowerIterationStall { iterations: max_iter, change })
}

/// Smallest eigenvalue of a self-adjoint operator by Lanczos with full
/// reorthogonalization. Stops on invariant subspace or when the Ritz residual
/// bound drops below tol * |lambda|.
pub fn lanczos_min<A>(mut apply: A, x0: DVector<f64>, w: &DVector<f64>, tol: f64, max_steps: usize) -> Result<f64>
where
    A: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n0 = wnorm(w, &x0);
    if n0 == 0.0 {
        return Ok(0.0);
    }
    let mut q = vec![x0 / n0];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut best = f64::INFINITY;
    for k in 0..max_steps {
        let mut r = apply(&q[k])?;
        let a = wdot(w, &q[k], &r);
        alpha.push(a);
        for _ in 0..2 {
            for qj in &q {
                let c = wdot(w, &r, qj);
                r.axpy(-c, qj, 1.0);
            }
        }
        let b = wnorm(w, &r);
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imin, lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
        best = lmin;
        let bound = b * eig.eigenvectors[(m - 1, imin)].abs();
        let scale = alpha.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if b <= 1e-13 * scale.max(f64::MIN_POSITIVE) || bound <= tol * lmin.abs().max(1e-300) {
            return Ok(lmin);
        }
        beta.push(b);
        q.push(r / b);
    }
    Ok(best)
}
