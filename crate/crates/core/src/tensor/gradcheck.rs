//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the scalar function forward; it never
//! looks at the tape's backward pass, so it is an independent oracle for
//! the analytic gradients.

/// Central difference of `f` with respect to every entry of every input.
pub fn central_difference<F>(inputs: &[Vec<f64>], step: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].len()];
        for i in 0..inputs[t].len() {
            let orig = work[t][i];
            work[t][i] = orig + step;
            let plus = f(&work);
            work[t][i] = orig - step;
            let minus = f(&work);
            work[t][i] = orig;
            g[i] = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    grads
}

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Outcome of comparing analytic against numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn new(analytic: Vec<Vec<f64>>, numeric: Vec<Vec<f64>>) -> Self {
        let max_rel_error = max_relative_error(&analytic, &numeric);
        Self {
            analytic,
            numeric,
            max_rel_error,
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}
