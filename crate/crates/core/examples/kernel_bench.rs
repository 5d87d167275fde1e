use speedlimit_core::numerics::*;
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[
        (128usize, 528usize, 528usize),
        (128, 528, 1016),
        (128, 120, 128),
        (128, 48, 64),
    ] {
        let x = Tensor2D::from_fn(m, k, |r, c| ((r * 31 + c * 17) % 97) as f32 / 50.0 - 1.0);
        let w = Tensor2D::from_fn(k, n, |r, c| ((r * 13 + c * 7) % 89) as f32 / 44.0 - 1.0);
        let b = Tensor2D::zeros(1, n);
        let packed = PackedInt8Weights::pack(&quantize_weights_symmetric(&w)).unwrap();
        let reps = 20;
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(linear(&x, &w, &b).unwrap());
        }
        let f = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(packed.forward(&x, &b).unwrap());
        }
        let q = t.elapsed().as_secs_f64() / reps as f64 * 1e3;
        let gf = 2.0 * (m * k * n) as f64 / 1e6;
        println!(
            "{m}x{k}x{n}: f32 {f:.3} ms ({:.1} GF/s)  int8 {q:.3} ms ({:.1} GOP/s)",
            gf / f,
            gf / q
        );
    }
}
