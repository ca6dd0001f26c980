use avel_core::data::{generate_synthetic, SynthSpec};
use avel_core::fusion::{FusionOp, FusionSpec, Placement};
use avel_core::localizer::{FeatureDims, LocalizerModel, ModelConfig, Variant};
use avel_core::nn::{seeded_rng, ParamStore, Session};
use avel_core::temporal::{run_sequence, LstmCell};
use avel_core::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn hidden_states(cell: &LstmCell, store: &ParamStore, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut s = Session::inference(store);
    let inputs: Vec<_> = xs.iter().map(|x| s.input(Tensor::vector(x.clone()).unwrap())).collect();
    let hs = run_sequence(&mut s, cell, &inputs).unwrap();
    hs.iter().map(|&h| s.data(h).to_vec()).collect()
}

fn setup(seed: u64) -> (LstmCell, ParamStore, Vec<Vec<f64>>) {
    let mut rng = seeded_rng(seed);
    let (d, h, t) = (rng.gen_range(1..6), rng.gen_range(1..7), rng.gen_range(2..12));
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "lstm", d, h);
    let xs = (0..t).map(|_| (0..d).map(|_| rng.gen_range(-20.0..20.0)).collect()).collect();
    (cell, store, xs)
}

proptest! {
    #[test]
    fn outputs_depend_only_on_the_past(seed in any::<u64>(), noise in -5.0f64..5.0) {
        let (cell, store, xs) = setup(seed);
        let t = (seed as usize) % (xs.len() - 1);
        let before = hidden_states(&cell, &store, &xs);
        let mut later = xs.clone();
        for x in &mut later[t + 1..] {
            x.iter_mut().for_each(|v| *v += noise);
        }
        let after = hidden_states(&cell, &store, &later);
        for i in 0..=t {
            let a: Vec<u64> = before[i].iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = after[i].iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn hidden_states_stay_inside_the_unit_box(seed in any::<u64>()) {
        let (cell, store, xs) = setup(seed);
        for h in hidden_states(&cell, &store, &xs) {
            prop_assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }
}

#[test]
fn modality_streams_share_no_parameters() {
    let spec = SynthSpec { n_videos: 1, visual_channels: 6, regions: 4, audio_dim: 5, event_region_cells: 1, ..SynthSpec::default() };
    let seq = &generate_synthetic(&spec).unwrap()[0];
    for placement in [Placement::Late, Placement::Decision] {
        let (variant, _) = Variant::parse("A+V").unwrap();
        let mut cfg = ModelConfig::new(variant, FeatureDims::of(seq));
        cfg.fusion = FusionSpec { joint_dim: 8, ..FusionSpec::new(FusionOp::Dmrn, placement) };
        cfg.hidden = 7;
        let (model, store) = LocalizerModel::new(cfg).unwrap();
        assert_eq!(model.num_lstms(), 2);
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        let audio: Vec<&str> = names.iter().copied().filter(|n| n.starts_with("lstm_a.")).collect();
        let visual: Vec<&str> = names.iter().copied().filter(|n| n.starts_with("lstm_v.")).collect();
        assert_eq!(audio.len(), 3);
        assert_eq!(visual.len(), 3);
        assert_eq!(store.get(store.find("lstm_a.w_input").unwrap()).shape(), [5, 28]);
        assert_eq!(store.get(store.find("lstm_v.w_input").unwrap()).shape(), [6, 28]);
        assert!(!names.iter().any(|n| n.starts_with("lstm.")));
    }
}
