// Hyperparameter sweep for the DIP variants on a scaled-down ellipse setup.
use tomo_autodiff::network::NetworkConfig;
use tomo_core::dataset::{generate_pair, Split};
use tomo_core::fbp::fbp_reconstruct;
use tomo_core::geometry::ParallelGeometry;
use tomo_core::metrics::psnr;
use tomo_core::noise::NoiseModel;
use tomo_core::variational::{tv_reconstruct, Discrepancy, TvConfig};
use tomo_recon::dip::{diptv_reconstruct, DipConfig};
use tomo_recon::bench::{default_fbp_filters, select_fbp_filter};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(64);
    let n_phantoms: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
    let (n_angles, n_det) = if size == 128 { (30, 183) } else { (30, 91) };
    let geom = ParallelGeometry::covering(n_angles, n_det, size).unwrap();
    let noise = NoiseModel::gaussian_default();
    let seed = 7;

    let pairs: Vec<_> = (0..n_phantoms)
        .map(|i| generate_pair(&geom, &noise, seed, 10, Split::Validation, i).unwrap())
        .collect();

    // FBP baseline with filter search
    let filter = select_fbp_filter(&default_fbp_filters(), &pairs, &geom).unwrap();
    let fbp_mean = pairs
        .iter()
        .map(|p| psnr(&fbp_reconstruct(&p.observation, &geom, &filter).unwrap(), &p.ground_truth).unwrap())
        .sum::<f64>() / pairs.len() as f64;
    println!("FBP: filter={}/{:.2} mean psnr {:.2}", filter.kind.name(), filter.frequency_scaling, fbp_mean);

    // TV alpha sweep
    for alpha in [0.3, 1.0, 3.0, 10.0, 30.0] {
        let mean = pairs
            .iter()
            .map(|p| {
                let r = tv_reconstruct(&p.observation, &geom, &Discrepancy::L2, &TvConfig::new(alpha, 1000)).unwrap();
                psnr(&r.image, &p.ground_truth).unwrap()
            })
            .sum::<f64>() / pairs.len() as f64;
        println!("TV alpha={alpha}: mean psnr {mean:.2}");
    }

    // DIP+TV sweep
    let net = NetworkConfig {
        scales: 5,
        channels_per_layer: 32,
        skip_channels: vec![0; 5],
        input_channels: 32,
        output_size: size,
    };
    for lr in [1e-3, 3e-3] {
        for alpha in [1.0, 3.0, 10.0] {
            for iters in [800usize, 1600] {
                let mut cfg = DipConfig::new(net.clone(), lr, iters, alpha);
                cfg.seed = 1;
                cfg.trace_every = 200;
                let mut mean = 0.0;
                let mut final_vs_max = 0.0;
                for p in &pairs {
                    let r = diptv_reconstruct(&p.observation, &geom, &cfg, Some(&p.ground_truth)).unwrap();
                    let fp = r.final_psnr().unwrap();
                    mean += fp;
                    final_vs_max += r.max_trace_psnr().unwrap() - fp;
                }
                mean /= pairs.len() as f64;
                final_vs_max /= pairs.len() as f64;
                println!("DIPTV lr={lr} alpha={alpha} iters={iters}: mean psnr {mean:.2} (max-final {final_vs_max:.2})");
            }
        }
    }
}
