// Dev probe: conv kernel throughput on the dominant shapes.
use lgsa_core::kernels::*;
use lgsa_core::rng::SplitMix64;
use lgsa_core::Elem;

fn randv(rng: &mut SplitMix64, n: usize) -> Vec<Elem> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0) as Elem).collect()
}

fn main() {
    let mut rng = SplitMix64::new(1);
    // (B, Cin, H, W, Cout) for UNet-16 levels at 64x64
    let shapes = [
        (8usize, 1usize, 64usize, 64usize, 16usize),
        (8, 16, 64, 64, 16),
        (8, 32, 32, 32, 32),
        (8, 64, 16, 16, 64),
        (8, 128, 8, 8, 128),
        (8, 256, 4, 4, 256),
        (8, 48, 64, 64, 16),
        (8, 384, 8, 8, 128),
    ];
    for (b, cin, h, w, cout) in shapes {
        let k = 3;
        let x = randv(&mut rng, b * cin * h * w);
        let wgt = randv(&mut rng, cout * cin * k * k);
        let bias = randv(&mut rng, cout);
        let macs = (b * cout * cin * h * w * k * k) as f64;

        let t0 = std::time::Instant::now();
        let out = conv2d_forward(&x, (b, cin, h, w), &wgt, &bias, (cout, k), 1);
        let fwd = t0.elapsed().as_secs_f64();

        let t0 = std::time::Instant::now();
        let mut dx = vec![0.0 as Elem; x.len()];
        conv2d_backward_input(&out, (b, cin, h, w), &wgt, (cout, k), 1, &mut dx);
        let bwd_in = t0.elapsed().as_secs_f64();

        let t0 = std::time::Instant::now();
        let mut dw = vec![0.0 as Elem; wgt.len()];
        let mut db = vec![0.0 as Elem; cout];
        conv2d_backward_params(&out, &x, (b, cin, h, w), (cout, k), 1, &mut dw, &mut db);
        let bwd_w = t0.elapsed().as_secs_f64();

        println!(
            "B{b} {cin:3}->{cout:3} {h}x{w}: fwd {:6.2} G MAC/s | dIn {:6.2} | dW {:6.2}",
            macs / fwd / 1e9,
            macs / bwd_in / 1e9,
            macs / bwd_w / 1e9
        );
    }
}
