use rand::Rng;

use super::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Affine layer `x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w: Vec<f64> = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self::with_values(
            store,
            name,
            Tensor::new(&[inputs, outputs], w)?,
            vec![0.0; outputs],
        )
    }

    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self> {
        Self::with_values(
            store,
            name,
            Tensor::zeros(&[inputs, outputs]),
            vec![0.0; outputs],
        )
    }

    fn with_values(store: &mut ParamStore, name: &str, w: Tensor, b: Vec<f64>) -> Result<Self> {
        let (inputs, outputs) = (w.shape()[0], w.shape()[1]);
        let w = store.add(&format!("{name}.w"), w)?;
        let b = store.add(&format!("{name}.b"), Tensor::vector(b))?;
        Ok(Linear {
            w,
            b,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w)?;
        let b = tape.param(self.b)?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Weights of a gated recurrent unit acting on `[x, h]`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = input_dim + hidden_dim;
        Ok(GruParams {
            update: Linear::new(store, &format!("{name}.update"), d, hidden_dim, rng)?,
            reset: Linear::new(store, &format!("{name}.reset"), d, hidden_dim, rng)?,
            candidate: Linear::new(store, &format!("{name}.candidate"), d, hidden_dim, rng)?,
            input_dim,
            hidden_dim,
        })
    }
}

/// One GRU step:
///
/// ```text
/// z  = σ(W_z·[x, h] + b_z)
/// r  = σ(W_r·[x, h] + b_r)
/// h̃  = tanh(W_h·[x, r⊙h] + b_h)
/// h' = (1 − z)⊙h + z⊙h̃
/// ```
pub fn gru_cell(tape: &mut Tape<'_>, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    if tape.shape(x) != [p.input_dim] || tape.shape(h) != [p.hidden_dim] {
        return Err(TensorError::Shape {
            op: "gru_cell",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(h).to_vec(),
        });
    }
    let xh = tape.concat(&[x, h], 0)?;
    let z = p.update.forward(tape, xh)?;
    let z = tape.sigmoid(z);
    let r = p.reset.forward(tape, xh)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let xrh = tape.concat(&[x, rh], 0)?;
    let cand = p.candidate.forward(tape, xrh)?;
    let cand = tape.tanh(cand);
    let neg_z = tape.neg(z);
    let keep = tape.add_scalar(neg_z, 1.0);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}
