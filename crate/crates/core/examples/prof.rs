//! Scratch profiling binary: times the phases of one training step and the
//! individual hot kernels at desk scale. Not part of the public surface.

use std::time::Instant;

use pantiny_core::loss::{composite, LossWeights};
use pantiny_core::model::{ModelConfig, PanTinyModel};
use pantiny_core::tensor::{random_tensor, Shape, Tensor};
use pantiny_core::train::{adam_update, Adam, ADAM_BETAS, ADAM_EPS};

fn time<R>(label: &str, iters: usize, mut f: impl FnMut() -> R) {
    // Warm once, then time.
    let _ = f();
    let t0 = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(f());
    }
    let ms = 1e3 * t0.elapsed().as_secs_f64() / iters as f64;
    println!("{label:<44} {ms:9.3} ms");
}

fn img(shape: Shape, seed: u64) -> Tensor {
    random_tensor(shape, seed).mul_scalar(0.2).add_scalar(0.5)
}

fn main() {
    let b = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1usize);
    if std::env::args().nth(2).as_deref() == Some("ftz") {
        #[cfg(target_arch = "x86_64")]
        unsafe {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            _mm_setcsr(_mm_getcsr() | (1 << 15) | (1 << 6)); // FTZ | DAZ
        }
        println!("(flush-to-zero enabled)");
    }
    let hw = 64usize;
    let model = PanTinyModel::build(ModelConfig::small(), 1).unwrap();
    let lrms = img(Shape::new(b, 4, hw / 4, hw / 4), 10);
    let pan = img(Shape::new(b, 1, hw, hw), 11);
    let target = img(Shape::new(b, 4, hw, hw), 12);

    println!("== phases (batch {b}, pan {hw}x{hw}) ==");
    time("forward", 5, || model.forward(&lrms, &pan).unwrap());
    let out = model.forward(&lrms, &pan).unwrap();
    time("composite loss fwd", 5, || composite(&out, &target, &LossWeights::default()).unwrap());
    time("forward+loss+backward", 5, || {
        let out = model.forward(&lrms, &pan).unwrap();
        let loss = composite(&out, &target, &LossWeights::default()).unwrap();
        loss.total.backward().unwrap()
    });
    {
        let mut m = model.clone();
        m.update_params(&mut |_, t| Ok(t.detach(true))).unwrap();
        let mut adam = Adam::new(ADAM_BETAS, ADAM_EPS);
        time("full step fwd+loss+bwd+adam", 5, || {
            let out = m.forward(&lrms, &pan).unwrap();
            let loss = composite(&out, &target, &LossWeights::default()).unwrap();
            let grads = loss.total.backward().unwrap();
            adam.step(&mut m, &grads, 1e-4).unwrap();
        });
        // Drift check: if steps slow down as training proceeds, something is
        // accumulating. Print the time of each block of 25 steps.
        for block in 0..6 {
            let t0 = Instant::now();
            for _ in 0..25 {
                let out = m.forward(&lrms, &pan).unwrap();
                let loss = composite(&out, &target, &LossWeights::default()).unwrap();
                let grads = loss.total.backward().unwrap();
                adam.step(&mut m, &grads, 1e-4).unwrap();
            }
            println!(
                "steps {:3}-{:3}: {:7.1} ms/step",
                block * 25,
                block * 25 + 24,
                1e3 * t0.elapsed().as_secs_f64() / 25.0
            );
        }
    }
    for (label, w) in [
        ("l1 only fwd+bwd", LossWeights::l1_only()),
        ("ssim only fwd+bwd", LossWeights { l1: 0.0, ssim: 1.0, focal: 0.0, ..LossWeights::default() }),
        ("focal only fwd+bwd", LossWeights { l1: 0.0, ssim: 0.0, focal: 1.0, ..LossWeights::default() }),
    ] {
        time(label, 5, || {
            let o = out.detach(true);
            composite(&o, &target, &w).unwrap().total.backward().unwrap()
        });
    }

    println!("== kernels (batch {b}, 24ch {hw}x{hw}) ==");
    let c = 24usize;
    let x = random_tensor(Shape::new(b, c, hw, hw), 2).detach(true);
    let x2 = random_tensor(Shape::new(b, 2 * c, hw, hw), 3).detach(true);
    let w11 = random_tensor(Shape::new(c, c, 1, 1), 4).detach(true);
    let w33 = random_tensor(Shape::new(c, 2 * c, 3, 3), 5).detach(true);
    let wdw = random_tensor(Shape::new(c, 1, 3, 3), 6).detach(true);
    let gamma = random_tensor(Shape::per_channel(c), 7).detach(true);
    let beta = random_tensor(Shape::per_channel(c), 8).detach(true);
    let tau = random_tensor(Shape::per_channel(2), 9).detach(true);

    time("conv1x1 24->24 fwd", 10, || x.conv2d(&w11, None, 1, 0, 1).unwrap());
    time("conv1x1 24->24 fwd+bwd", 5, || {
        x.conv2d(&w11, None, 1, 0, 1).unwrap().mean_all().backward().unwrap()
    });
    time("conv3x3 48->24 fwd", 10, || x2.conv2d(&w33, None, 1, 1, 1).unwrap());
    time("conv3x3 48->24 fwd+bwd", 5, || {
        x2.conv2d(&w33, None, 1, 1, 1).unwrap().mean_all().backward().unwrap()
    });
    time("dw3x3 24 fwd", 10, || x.conv2d(&wdw, None, 1, 1, c).unwrap());
    time("dw3x3 24 fwd+bwd", 5, || {
        x.conv2d(&wdw, None, 1, 1, c).unwrap().mean_all().backward().unwrap()
    });
    time("layer_norm fwd", 10, || x.layer_norm(&gamma, &beta, 1e-5).unwrap());
    time("layer_norm fwd+bwd", 5, || {
        x.layer_norm(&gamma, &beta, 1e-5).unwrap().mean_all().backward().unwrap()
    });
    time("gelu fwd", 10, || x.gelu());
    time("gelu fwd+bwd", 5, || x.gelu().mean_all().backward().unwrap());
    time("attention chain fwd", 10, || {
        x.l2_normalize_rows()
            .channel_gram(&x.l2_normalize_rows(), 2)
            .unwrap()
            .bmul(&tau)
            .unwrap()
            .softmax_lastdim()
            .attn_apply(&x, 2)
            .unwrap()
    });
    time("attention chain fwd+bwd", 5, || {
        x.l2_normalize_rows()
            .channel_gram(&x.l2_normalize_rows(), 2)
            .unwrap()
            .bmul(&tau)
            .unwrap()
            .softmax_lastdim()
            .attn_apply(&x, 2)
            .unwrap()
            .mean_all()
            .backward()
            .unwrap()
    });
    time("upsample bicubic 16->64", 10, || lrms.upsample(4, pantiny_core::tensor::UpsampleMode::Bicubic).unwrap());
    time("add fwd+bwd", 10, || x.add(&x).unwrap().mean_all().backward().unwrap());
    time("mul fwd+bwd", 10, || x.mul(&x).unwrap().mean_all().backward().unwrap());

    // Raw adam_update throughput check.
    let n = 45_081;
    let mut p = vec![0.1f32; n];
    let g = vec![0.01f32; n];
    let mut m = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    time("adam_update 45k params", 10, || {
        adam_update(&mut p, &g, &mut m, &mut v, 1, 1e-4, ADAM_BETAS, ADAM_EPS)
    });
}
