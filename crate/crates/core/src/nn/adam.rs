use super::{Dense, Gradients, Network, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter of one network.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    m: Vec<Dense<F>>,
    v: Vec<Dense<F>>,
    step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(net: &Network<F>, config: AdamConfig) -> Self {
        let zeros = net.zero_gradients().layers;
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update in place.
    pub fn update(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let step_size = F::of(c.lr / (1.0 - c.beta1.powi(t)));
        let v_corr = F::of(1.0 / (1.0 - c.beta2.powi(t)));
        let (b1, b2, eps) = (F::of(c.beta1), F::of(c.beta2), F::of(c.eps));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);

        let tiny = F::min_positive_value();
        let apply = |p: &mut [F], g: &[F], m: &mut [F], v: &mut [F]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let mi = b1 * *m + one_b1 * g;
                let vi = b2 * *v + one_b2 * g * g;
                // subnormal moments are flushed; arithmetic on them is very slow
                *m = if mi.abs() < tiny { F::zero() } else { mi };
                *v = if vi < tiny { F::zero() } else { vi };
                *p -= step_size * *m / ((*v * v_corr).sqrt() + eps);
            }
        };

        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            apply(
                layer.weight.as_slice_mut().expect("standard layout"),
                g.weight.as_slice().expect("standard layout"),
                m.weight.as_slice_mut().expect("standard layout"),
                v.weight.as_slice_mut().expect("standard layout"),
            );
            apply(
                layer.bias.as_slice_mut().expect("standard layout"),
                g.bias.as_slice().expect("standard layout"),
                m.bias.as_slice_mut().expect("standard layout"),
                v.bias.as_slice_mut().expect("standard layout"),
            );
        }
    }
}
