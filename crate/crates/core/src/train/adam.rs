use crate::nn::{Gradients, ParamSet, Real};

/// Adam with bias correction; frozen rows are left untouched.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.ids().map(|id| vec![T::zero(); params.get(id).data.len()]).collect();
        Adam { beta1: T::of(beta1), beta2: T::of(beta2), eps: T::of(eps), t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>, lr: T) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let frozen = params.frozen_rows(id).to_vec();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let t = params.get_mut(id);
            let cols = t.cols;
            for (e, p) in t.data.iter_mut().enumerate() {
                if frozen[e / cols] {
                    continue;
                }
                m[e] = self.beta1 * m[e] + (one - self.beta1) * g[e];
                v[e] = self.beta2 * v[e] + (one - self.beta2) * g[e] * g[e];
                let mh = m[e] / c1;
                let vh = v[e] / c2;
                *p = *p - lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
