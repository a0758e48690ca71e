//! Checks reverse-mode gradients of a small GRU + softmax model against
//! central finite differences.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use acdzero::tensor::{gru_cell, Gradients, GruParams, Linear, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Model {
    gru: GruParams,
    head: Linear,
}

fn loss(store: &ParamStore, model: &Model, inputs: &[Vec<f64>], target: usize) -> (f64, Gradients) {
    let mut tape = Tape::new(store);
    let mut h = tape.constant(Tensor::vector(vec![0.0; model.gru.hidden_dim]));
    for x in inputs {
        let x = tape.constant(Tensor::vector(x.clone()));
        h = gru_cell(&mut tape, x, h, &model.gru).unwrap();
    }
    let logits = model.head.forward(&mut tape, h).unwrap();
    let probs = tape.softmax(logits, None).unwrap();
    let p = tape.gather(probs, &[target]).unwrap();
    let p = tape.sum(p);
    let nll = tape.log(p);
    let nll = tape.neg(nll);
    let grads = tape.backward(nll).unwrap();
    (tape.item(nll), grads)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let model = Model {
        gru: GruParams::new(&mut store, "gru", 3, 5, &mut rng).unwrap(),
        head: Linear::new(&mut store, "head", 5, 4, &mut rng).unwrap(),
    };
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let (value, grads) = loss(&store, &model, &inputs, 2);
    println!("loss {value:.6}");

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..store.value(id).len() {
            let orig = store.values_mut(id)[i];
            store.values_mut(id)[i] = orig + h;
            let up = loss(&store, &model, &inputs, 2).0;
            store.values_mut(id)[i] = orig - h;
            let down = loss(&store, &model, &inputs, 2).0;
            store.values_mut(id)[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads.get(id)[i];
            num += (g - fd).powi(2);
            den += g.powi(2).max(fd.powi(2));
        }
        let rel = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        worst = worst.max(rel);
        println!("{:<16} relative error {rel:.2e}", store.name(id));
    }
    println!("worst {worst:.2e}");
}
