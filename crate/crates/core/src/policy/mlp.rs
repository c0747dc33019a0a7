//! Fully connected tanh network over a flat parameter slice.
//!
//! Layer `l` maps `sizes[l] → sizes[l + 1]`; its parameters are the weight
//! matrix (row-major, `out × in`) followed by the bias vector. Hidden layers
//! apply `tanh`; the output layer is linear.

pub(crate) fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Activations of every layer, input first and network output last.
pub(crate) fn forward(theta: &[f64], sizes: &[usize], input: &[f64]) -> Vec<Vec<f64>> {
    let n_layers = sizes.len() - 1;
    let mut acts = Vec::with_capacity(sizes.len());
    acts.push(input.to_vec());
    let mut offset = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let weights = &theta[offset..offset + n_in * n_out];
        let bias = &theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let prev = &acts[l];
        let mut out: Vec<f64> = (0..n_out)
            .map(|o| {
                let row = &weights[o * n_in..(o + 1) * n_in];
                bias[o] + crate::dot(row, prev)
            })
            .collect();
        if l + 1 < n_layers {
            out.iter_mut().for_each(|x| *x = x.tanh());
        }
        acts.push(out);
    }
    acts
}

/// Adds `scale · (∂output/∂θ)ᵀ grad_out` into `grad`.
pub(crate) fn backward(
    theta: &[f64],
    sizes: &[usize],
    acts: &[Vec<f64>],
    grad_out: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    let n_layers = sizes.len() - 1;
    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for l in 0..n_layers {
        offsets.push(offset);
        offset += sizes[l] * sizes[l + 1] + sizes[l + 1];
    }
    let mut delta: Vec<f64> = grad_out.to_vec();
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let base = offsets[l];
        let input = &acts[l];
        for o in 0..n_out {
            let d = scale * delta[o];
            if d != 0.0 {
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                crate::axpy(d, input, row);
            }
            grad[base + n_in * n_out + o] += d;
        }
        if l > 0 {
            let weights = &theta[base..base + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                if delta[o] != 0.0 {
                    crate::axpy(delta[o], &weights[o * n_in..(o + 1) * n_in], &mut prev);
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}
