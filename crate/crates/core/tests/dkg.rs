use iadg_core::backbone::BackboneConfig;
use iadg_core::dkg::{dkg_forward, DkgParams, KernelMode};
use iadg_core::model::Model;
use iadg_core::numcore::{ParamStore, Rng, Tape, Tensor};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn block(channels: usize, seed: u64, live_generator: bool) -> (ParamStore, DkgParams) {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let p = DkgParams::new(&mut store, "b", channels, &mut rng).unwrap();
    if live_generator {
        let w = random(store.get(p.gen_w).shape(), &mut rng);
        let b = random(store.get(p.gen_b).shape(), &mut rng);
        *store.get_mut(p.gen_w) = w;
        *store.get_mut(p.gen_b) = b;
    }
    (store, p)
}

fn run(store: &ParamStore, p: &DkgParams, x: &Tensor, mode: KernelMode) -> Tensor {
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = dkg_forward(&mut tape, xv, p, &bound, mode).unwrap();
    tape.value(y).clone()
}

fn sample(t: &Tensor, n: usize) -> &[f64] {
    let per = t.len() / t.shape()[0];
    &t.data()[n * per..(n + 1) * per]
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn batch_permutation_permutes_outputs_exactly() {
    let (store, p) = block(6, 1, true);
    let mut rng = Rng::new(2);
    let x = random(&[5, 6, 5, 5], &mut rng);
    let perm = [3, 0, 4, 1, 2];
    let shuffled = Tensor::stack(&perm.iter().map(|&i| Tensor::new(&[6, 5, 5], sample(&x, i).to_vec()).unwrap()).collect::<Vec<_>>()).unwrap();
    let y = run(&store, &p, &x, KernelMode::Both);
    let ys = run(&store, &p, &shuffled, KernelMode::Both);
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(bits(sample(&ys, k)), bits(sample(&y, i)));
    }
}

#[test]
fn each_sample_sees_only_its_own_kernels() {
    let (store, p) = block(4, 3, true);
    let mut rng = Rng::new(4);
    let x = random(&[4, 4, 6, 6], &mut rng);
    let y = run(&store, &p, &x, KernelMode::Both);
    for n in 0..4 {
        let alone = Tensor::new(&[1, 4, 6, 6], sample(&x, n).to_vec()).unwrap();
        assert_eq!(bits(run(&store, &p, &alone, KernelMode::Both).data()), bits(sample(&y, n)));
    }
    // Perturbing one sample leaves every other output untouched.
    let mut x2 = x.clone();
    let per = x.len() / 4;
    for v in &mut x2.data_mut()[per..2 * per] {
        *v += 0.3;
    }
    let y2 = run(&store, &p, &x2, KernelMode::Both);
    for n in [0, 2, 3] {
        assert_eq!(bits(sample(&y2, n)), bits(sample(&y, n)));
    }
    assert_ne!(sample(&y2, 1), sample(&y, 1));
}

#[test]
fn zero_generator_equals_static_only_bit_exactly() {
    let (store, p) = block(8, 5, false);
    let mut rng = Rng::new(6);
    let x = random(&[3, 8, 5, 5], &mut rng);
    assert_eq!(bits(run(&store, &p, &x, KernelMode::Both).data()), bits(run(&store, &p, &x, KernelMode::StaticOnly).data()));
}

#[test]
fn live_generator_differs_from_static_only() {
    let (store, p) = block(8, 7, true);
    let mut rng = Rng::new(8);
    let x = random(&[2, 8, 5, 5], &mut rng);
    assert_ne!(run(&store, &p, &x, KernelMode::Both), run(&store, &p, &x, KernelMode::StaticOnly));
    assert_ne!(run(&store, &p, &x, KernelMode::DynamicOnly), run(&store, &p, &x, KernelMode::StaticOnly));
}

#[test]
fn fresh_model_predicts_identically_in_both_and_static_modes() {
    let mut rng = Rng::new(9);
    let images = Tensor::new(&[3, 3, 16, 16], (0..3 * 3 * 256).map(|_| rng.uniform()).collect()).unwrap();
    let config = |mode| BackboneConfig {
        image_size: 16,
        channels: vec![3, 4, 8, 8],
        kernel_mode: mode,
    };
    let both = Model::new(config(KernelMode::Both), &mut Rng::new(1)).unwrap();
    let stat = Model::new(config(KernelMode::StaticOnly), &mut Rng::new(1)).unwrap();
    assert_eq!(bits(&both.predict(&images).unwrap()), bits(&stat.predict(&images).unwrap()));
}
