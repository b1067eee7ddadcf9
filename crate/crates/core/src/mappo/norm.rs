/// Running per-feature mean/variance used to normalize network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const NORM_CLIP: f64 = 10.0;
const NORM_EPS: f64 = 1e-8;

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch of rows (`data.len()` must be a multiple of the dimension).
    pub fn update(&mut self, data: &[f64]) {
        let dim = self.dim();
        let n = data.len() / dim;
        if n == 0 {
            return;
        }
        let nf = n as f64;
        let mut bmean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for (m, x) in bmean.iter_mut().zip(row) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nf);
        let mut bvar = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((v, x), m) in bvar.iter_mut().zip(row).zip(&bmean) {
                *v += (x - m) * (x - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= nf);

        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = nf;
            return;
        }
        let total = self.count + nf;
        for k in 0..dim {
            let delta = bmean[k] - self.mean[k];
            let m2 = self.var[k] * self.count + bvar[k] * nf + delta * delta * self.count * nf / total;
            self.mean[k] += delta * nf / total;
            self.var[k] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = ((x[k] - self.mean[k]) / (self.var[k] + NORM_EPS).sqrt()).clamp(-NORM_CLIP, NORM_CLIP);
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merged_stats_match_direct() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.5 - 1.0).collect();
        let mut inc = RunningNorm::new(2);
        inc.update(&data[..16]);
        inc.update(&data[16..]);
        let mut all = RunningNorm::new(2);
        all.update(&data);
        for k in 0..2 {
            assert!((inc.mean[k] - all.mean[k]).abs() < 1e-12);
            assert!((inc.var[k] - all.var[k]).abs() < 1e-12);
        }
        assert_eq!(inc.count, 20.0);
    }

    #[test]
    fn clipped() {
        let mut n = RunningNorm::new(1);
        n.update(&[0.0, 0.0, 0.0, 1e-3]);
        assert_eq!(n.normalize(&[100.0])[0], NORM_CLIP);
        assert_eq!(n.normalize(&[-100.0])[0], -NORM_CLIP);
    }
}
