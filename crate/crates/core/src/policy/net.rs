//! Single-hidden-layer tanh network over a slice of a flat parameter vector.

/// Dense layer `rows x cols` with bias, stored row-major at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Dense {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    fn bias(&self) -> usize {
        self.offset + self.rows * self.cols
    }

    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        let b = self.bias();
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &p[self.offset + i * self.cols..self.offset + (i + 1) * self.cols];
            *o = p[b + i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates `scale * dL/dW` into `grad` and writes `dL/dx` into `dx` if given.
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        dout: &[f64],
        scale: f64,
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let b = self.bias();
        for (i, &d) in dout.iter().enumerate().take(self.rows) {
            let ds = d * scale;
            grad[b + i] += ds;
            let row = &mut grad[self.offset + i * self.cols..self.offset + (i + 1) * self.cols];
            row.iter_mut().zip(x).for_each(|(g, v)| *g += ds * v);
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (i, &d) in dout.iter().enumerate().take(self.rows) {
                let row = &p[self.offset + i * self.cols..self.offset + (i + 1) * self.cols];
                dx.iter_mut().zip(row).for_each(|(g, w)| *g += d * w);
            }
        }
    }
}

/// `input -> tanh(hidden) -> linear output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, offset: usize) -> Self {
        let h = Dense {
            rows: hidden,
            cols: input,
            offset,
        };
        let o = Dense {
            rows: output,
            cols: hidden,
            offset: offset + h.len(),
        };
        Mlp {
            hidden: h,
            output: o,
        }
    }

    pub fn len(&self) -> usize {
        self.hidden.len() + self.output.len()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.hidden.offset..self.hidden.offset + self.len()
    }

    pub fn forward(&self, p: &[f64], input: &[f64]) -> MlpCache {
        let mut hidden = vec![0.0; self.hidden.rows];
        self.hidden.forward(p, input, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut output = vec![0.0; self.output.rows];
        self.output.forward(p, &hidden, &mut output);
        MlpCache {
            input: input.to_vec(),
            hidden,
            output,
        }
    }

    /// Backpropagates `dout` (gradient w.r.t. the linear output).
    pub fn backward(
        &self,
        p: &[f64],
        cache: &MlpCache,
        dout: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let mut dh = vec![0.0; self.hidden.rows];
        self.output
            .backward(p, &cache.hidden, dout, scale, grad, Some(&mut dh));
        for (d, h) in dh.iter_mut().zip(&cache.hidden) {
            *d *= 1.0 - h * h;
        }
        self.hidden
            .backward(p, &cache.input, &dh, scale, grad, None);
    }
}
