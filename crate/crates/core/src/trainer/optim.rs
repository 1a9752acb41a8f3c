use orthoseg_tensor::Float;

/// Nesterov momentum in the form `v = mu v - lr g; theta += mu v - lr g`.
pub fn nesterov_update<T: Float>(
    theta: &mut [T],
    velocity: &mut [T],
    grad: &[T],
    lr: T,
    momentum: T,
) {
    debug_assert!(theta.len() == velocity.len() && theta.len() == grad.len());
    for ((t, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *t += momentum * *v - lr * g;
    }
}
