use unmix_core::kernel::{khype_batch, KernelSpec, DEFAULT_MU};
use unmix_core::metrics::mse_loss;
use unmix_core::mixmodels::{gen_scene, BilinearCoupling, MixtureModel, SceneSpec};
use unmix_core::solvers::{fcls_batch, FclsOptions};

#[test]
fn khype_beats_fcls_on_bilinear_scenes() {
    for seed in 1..=5 {
        let model = MixtureModel::Bilinear(BilinearCoupling::uniform(3, 1.0).unwrap());
        let scene = gen_scene(&SceneSpec::strip(3, 50, 500, model, seed)).unwrap();
        let m = &scene.endmembers;
        let spec = KernelSpec::median_heuristic(m).unwrap();
        let kh = khype_batch(m, &scene.cube, &spec, DEFAULT_MU).unwrap();
        let (a, _) = fcls_batch(m, &scene.cube, &FclsOptions::default()).unwrap();
        let fcls_recon = m.data() * a.data();
        let kh_mse = mse_loss(scene.cube.data(), &kh.reconstruction).unwrap();
        let fc_mse = mse_loss(scene.cube.data(), &fcls_recon).unwrap();
        println!("seed {seed}: khype {kh_mse:.3e} fcls {fc_mse:.3e} kkt {:.1e}", kh.max_kkt_residual);
        assert!(kh_mse < fc_mse, "seed {seed}");
        assert!(kh.max_kkt_residual <= 1e-6, "seed {seed}: kkt {}", kh.max_kkt_residual);
    }
}
