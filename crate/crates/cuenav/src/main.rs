use cuenav::tensor::graph::Graph;
use cuenav::tensor::params::{he_std, ParamStore};
use cuenav::tensor::Tensor;
use std::time::Instant;

fn main() {
    // throwaway benchmark: one encoder-ish stack forward+backward.
    let batch = 16;
    let res = 64;
    let base = 8usize;
    let mut store: ParamStore<f32> = ParamStore::new();
    let chans = [3, 2 * base, 4 * base, 8 * base, 16 * base];
    for k in 0..4 {
        let (ci, co) = (chans[k], chans[k + 1]);
        store.add_randn(&format!("b{k}.c1.w"), &[co, ci, 3, 3], he_std(ci * 9), 1);
        store.add_randn(&format!("b{k}.c1.b"), &[co], 0.0, 1);
        store.add_randn(&format!("b{k}.c2.w"), &[co, co, 3, 3], he_std(co * 9), 1);
        store.add_randn(&format!("b{k}.c2.b"), &[co], 0.0, 1);
        store.add_randn(&format!("b{k}.sk.w"), &[co, ci, 1, 1], he_std(ci), 1);
    }
    let input = Tensor::full(&[batch, 3, res, res], 0.5f32);
    let iters = 10;
    let t0 = Instant::now();
    let mut sink = 0.0f32;
    for _ in 0..iters {
        let mut g = Graph::new();
        let mut x = g.constant(input.clone());
        for k in 0..4 {
            let w1 = store.idx(&format!("b{k}.c1.w")).unwrap();
            let b1 = store.idx(&format!("b{k}.c1.b")).unwrap();
            let w2 = store.idx(&format!("b{k}.c2.w")).unwrap();
            let b2 = store.idx(&format!("b{k}.c2.b")).unwrap();
            let sk = store.idx(&format!("b{k}.sk.w")).unwrap();
            let w1 = g.param(&store, w1);
            let b1 = g.param(&store, b1);
            let w2 = g.param(&store, w2);
            let b2 = g.param(&store, b2);
            let sk = g.param(&store, sk);
            let c1 = g.conv2d(x, w1, Some(b1), 2, 1).unwrap();
            let r1 = g.relu(c1);
            let c2 = g.conv2d(r1, w2, Some(b2), 1, 1).unwrap();
            let r2 = g.relu(c2);
            let s = g.conv2d(x, sk, None, 2, 0).unwrap();
            x = g.add(r2, s).unwrap();
        }
        let pooled = g.avg_pool_global(x).unwrap();
        let tgt = g.constant(Tensor::zeros(g.shape(pooled)));
        let loss = g.mse_loss(pooled, tgt).unwrap();
        g.backward(loss).unwrap();
        g.accumulate_param_grads(&mut store);
        sink += g.value(loss).item();
        store.clear_grads();
    }
    let dt = t0.elapsed().as_secs_f64();
    let imgs = (iters * batch) as f64;
    println!(
        "base={base} res={res}: {:.1} ms/image fwd+bwd ({:.2} s total, sink {sink})",
        dt / imgs * 1e3,
        dt
    );
}
