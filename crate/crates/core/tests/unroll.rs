use nalgebra::DMatrix;
mod fixtures;

use fixtures::training_fixture;
use unmix_core::mixmodels::{dirichlet_abundances, random_endmembers};
use unmix_core::unroll::{
    init_params_from_model, train_unroll, unroll_backward, unroll_forward, UnrollLayer,
    UnrollParams,
};
use unmix_core::EndmemberMatrix;

fn loss(p: &UnrollParams, ys: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    unroll_backward(p, ys, t).unwrap().loss
}

fn perturbed(p: &UnrollParams, edit: impl Fn(&mut [UnrollLayer])) -> UnrollParams {
    let mut layers = p.layers().to_vec();
    edit(&mut layers);
    UnrollParams::new(layers).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let (r, l, k) = (3, 10, 3);
    let m = EndmemberMatrix::reflectance(random_endmembers(r, l, 11).unwrap()).unwrap();
    let a = dirichlet_abundances(r, 6, 11);
    let ys = m.data() * a.data();
    // Move away from the analytic point so every parameter matters.
    let base = init_params_from_model(&m, 0.1, 0.8, 0.02, 0.9, k).unwrap();
    let p = perturbed(&base, |layers| {
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.w = layer.w.map(|x| x * (1.0 + 0.05 * (i as f64 + 1.0)));
            layer.b[(0, 1)] += 0.05;
            layer.eta += 0.1 * i as f64;
        }
    });
    let g = unroll_backward(&p, &ys, a.data()).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, plus: UnrollParams, minus: UnrollParams| {
        let fd = (loss(&plus, &ys, a.data()) - loss(&minus, &ys, a.data())) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs());
        let rel = if scale < 1e-9 { 0.0 } else { (analytic - fd).abs() / scale };
        worst = worst.max(rel);
    };
    for layer in 0..k {
        for idx in 0..r * l {
            check(
                g.layers[layer].w[idx],
                perturbed(&p, |ls| ls[layer].w[idx] += h),
                perturbed(&p, |ls| ls[layer].w[idx] -= h),
            );
        }
        for idx in 0..r * r {
            check(
                g.layers[layer].b[idx],
                perturbed(&p, |ls| ls[layer].b[idx] += h),
                perturbed(&p, |ls| ls[layer].b[idx] -= h),
            );
        }
        check(
            g.layers[layer].theta,
            perturbed(&p, |ls| ls[layer].theta += h),
            perturbed(&p, |ls| ls[layer].theta -= h),
        );
        check(
            g.layers[layer].eta,
            perturbed(&p, |ls| ls[layer].eta += h),
            perturbed(&p, |ls| ls[layer].eta -= h),
        );
    }
    println!("worst relative error {worst:.2e}");
    assert!(worst < 1e-4);
}

#[test]
fn permuting_endmembers_permutes_outputs() {
    let m = random_endmembers(4, 20, 5).unwrap();
    let perm = [2usize, 0, 3, 1];
    let mp = DMatrix::from_fn(20, 4, |i, j| m[(i, perm[j])]);
    let m = EndmemberMatrix::reflectance(m).unwrap();
    let mp = EndmemberMatrix::reflectance(mp).unwrap();
    let ys = m.data() * dirichlet_abundances(4, 10, 5).data();
    let p = init_params_from_model(&m, 0.5, 0.5, 0.01, 1.0, 20).unwrap();
    let pp = init_params_from_model(&mp, 0.5, 0.5, 0.01, 1.0, 20).unwrap();
    for y in ys.column_iter() {
        let out = unroll_forward(&p, y.as_slice(), false).unwrap();
        let outp = unroll_forward(&pp, y.as_slice(), false).unwrap();
        assert!(out.raw.iter().all(|&v| v >= 0.0));
        for j in 0..4 {
            let diff = (outp.raw[j] - out.raw[perm[j]]).abs();
            assert!(diff < 1e-10, "{diff:e}");
        }
    }
}

#[test]
fn training_improves_validation_error() {
    let fx = training_fixture();
    assert!(fx.condition_number >= 50.0, "cond {}", fx.condition_number);
    let (_, report) = train_unroll(fx.cube.data(), fx.abundances.data(), &fx.config, &fx.params0).unwrap();
    let (first, last) = (report.validation_mse[0], *report.validation_mse.last().unwrap());
    assert!(last <= 0.8 * first, "validation mse {first:.3e} -> {last:.3e}");
    assert!(report.train_loss.last().unwrap() <= &report.train_loss[0]);
}
