//! A plain pre-norm transformer block written directly on row-major `Vec<f64>`
//! matrices, sharing no code with the library's tape.

#![allow(dead_code)]

pub struct Mat {
    pub r: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Mat {
    pub fn new(r: usize, c: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), r * c);
        Self { r, c, v }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.c + j]
    }
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.c, b.r);
    let mut v = vec![0.0; a.r * b.c];
    for i in 0..a.r {
        for j in 0..b.c {
            let mut s = 0.0;
            for k in 0..a.c {
                s += a.at(i, k) * b.at(k, j);
            }
            v[i * b.c + j] = s;
        }
    }
    Mat::new(a.r, b.c, v)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    let mut v = vec![0.0; x.r * x.c];
    for i in 0..x.r {
        let row = &x.v[i * x.c..(i + 1) * x.c];
        let mean = row.iter().sum::<f64>() / x.c as f64;
        let var = row.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / x.c as f64;
        for j in 0..x.c {
            v[i * x.c + j] = g[j] * (row[j] - mean) / (var + eps).sqrt() + b[j];
        }
    }
    Mat::new(x.r, x.c, v)
}

pub struct PlainBlock {
    pub d: usize,
    pub heads: usize,
    pub eps: f64,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl PlainBlock {
    /// `H = X + Attn(LN1 X)`, `out = H + MLP(LN2 H)`; also returns the
    /// per-head attention maps.
    pub fn forward(&self, x: &Mat) -> (Mat, Vec<Mat>) {
        let n = x.r;
        let d = self.d;
        let dh = d / self.heads;
        let a = layer_norm(x, &self.ln1_g, &self.ln1_b, self.eps);
        let q = mm(&a, &self.wq);
        let k = mm(&a, &self.wk);
        let v = mm(&a, &self.wv);
        let mut cat = vec![0.0; n * d];
        let mut maps = Vec::new();
        for h in 0..self.heads {
            let mut att = vec![0.0; n * n];
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for t in 0..dh {
                        s += q.at(i, h * dh + t) * k.at(j, h * dh + t);
                    }
                    scores[j] = s / (dh as f64).sqrt();
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    att[i * n + j] = e[j] / z;
                }
                for t in 0..dh {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += att[i * n + j] * v.at(j, h * dh + t);
                    }
                    cat[i * d + h * dh + t] = s;
                }
            }
            maps.push(Mat::new(n, n, att));
        }
        let y = mm(&Mat::new(n, d, cat), &self.wo);
        let hmat = Mat::new(n, d, x.v.iter().zip(&y.v).map(|(a, b)| a + b).collect());
        let b2in = layer_norm(&hmat, &self.ln2_g, &self.ln2_b, self.eps);
        let mut f1 = mm(&b2in, &self.w1);
        for i in 0..n {
            for j in 0..f1.c {
                f1.v[i * f1.c + j] = gelu(f1.v[i * f1.c + j] + self.b1[j]);
            }
        }
        let f2 = mm(&f1, &self.w2);
        let mut out = hmat.v.clone();
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] += f2.at(i, j) + self.b2[j];
            }
        }
        (Mat::new(n, d, out), maps)
    }

    /// Mutable views of every weight, in a fixed order, for finite differences.
    pub fn weights_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq.v,
            &mut self.wk.v,
            &mut self.wv.v,
            &mut self.wo.v,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1.v,
            &mut self.b1,
            &mut self.w2.v,
            &mut self.b2,
        ]
    }
}

/// Fourth-order central difference of `f` with respect to `x[i]`.
pub fn richardson(f: &mut dyn FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    let d1 = f(x0 + h) - f(x0 - h);
    let d2 = f(x0 + 2.0 * h) - f(x0 - 2.0 * h);
    (8.0 * d1 - d2) / (12.0 * h)
}
