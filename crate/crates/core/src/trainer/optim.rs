/// Nesterov momentum in the "velocity then look-ahead" form:
///
/// ```text
/// v ← μ·v − lr·g
/// p ← p + μ·v − lr·g
/// ```
///
/// With `μ = 0` this is plain SGD.
pub fn nesterov_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
    debug_assert!((0.0..1.0).contains(&mu));
    assert_eq!(params.len(), grad.len());
    assert_eq!(velocity.len(), grad.len());
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v - lr * g;
        *p += mu * *v - lr * g;
    }
}
