//! Anchor-free detector: optional enhancement front-end, stride-pyramid
//! backbone, path-aggregation neck and decoupled head, with training,
//! decoding and the ablation driver.

pub mod ablation;
pub mod assign;
pub mod config;
pub mod decode;
pub mod loss;
pub mod model;
pub mod train;

pub use ablation::{ablation_config, predict_set, run_detector_ablation, LabeledSet};
pub use assign::{assign_targets, level_for_box, location_centers, Assignment, Positive};
pub use config::{DetectorConfig, PldSettings};
pub use decode::{decode_image, detect, detect_batch, nms};
pub use loss::{compute_loss, forward_train, iou_loss, LossReport};
pub use model::{build_msgnet, Detector, HeadOutput};
pub use train::{train_detector, DetectorTrainSettings, OptimizerKind};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{stack_images, synth_dataset, BoxAnnotation, SynthOptions};
    use crate::labels::{BoxXywh, Category, SceneClass};
    use crate::sgie::SgieConfig;
    use msgnet_autograd::nn::{named_params, param_count};
    use msgnet_autograd::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> DetectorConfig {
        DetectorConfig {
            stem_width: 4,
            widths: vec![4, 8, 8, 8],
            head_width: 8,
            sgie: SgieConfig {
                discriminator_widths: vec![4],
                enhancer_width: 4,
                prompts: 2,
            },
            ..DetectorConfig::default()
        }
    }

    fn build(config: DetectorConfig, seed: u64) -> Detector {
        build_msgnet(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn fixture(n: usize) -> (Vec<Tensor>, Vec<Vec<BoxAnnotation>>) {
        let opts = SynthOptions::new(32, 32, 2).with_min_side(10.0);
        let samples = synth_dataset(n, &opts, &[SceneClass::Sunny], 5).unwrap();
        samples.into_iter().map(|s| (s.image, s.record.objects)).unzip()
    }

    #[test]
    fn parameter_count_is_deterministic_and_pld_delta_matches() {
        let c = tiny_config();
        assert_eq!(param_count(&build(c.clone(), 1)), param_count(&build(c.clone(), 2)));
        let plain = DetectorConfig {
            use_pld: false,
            ..c.clone()
        };
        let delta = param_count(&build(c.clone(), 1)) as isize - param_count(&build(plain, 1)) as isize;
        assert_eq!(delta, c.pld_param_delta());
        // Per stage: PLD-Conv minus a bias-free 3x3 conv of the same width.
        let by_hand: isize = c
            .widths
            .iter()
            .map(|&w| {
                let w = w as isize;
                (w * 9 * 6 + 6) + (w * w * 3 + w) + (w * w * 3 + w) + (w * 2 * w + w) - 9 * w * w
            })
            .sum();
        assert_eq!(delta, by_hand);
    }

    #[test]
    fn module_placement_follows_flags() {
        let full = build(tiny_config(), 1);
        let names: Vec<String> = named_params(&full).into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n.starts_with("stage3.pld.")));
        assert!(names.iter().any(|n| n.starts_with("neck.bottom_up1.msdrf.")));
        assert!(full.sgie.is_none());
        let c = DetectorConfig {
            use_sgie: true,
            use_msdrf: false,
            ..tiny_config()
        };
        let m = build(c, 1);
        assert!(m.sgie.is_some());
        let names: Vec<String> = named_params(&m).into_iter().map(|(n, _)| n).collect();
        assert!(!names.iter().any(|n| n.contains("msdrf")));
        assert!(names.iter().any(|n| n.starts_with("sgie.enhancer.")));
    }

    #[test]
    fn head_output_layout() {
        let m = build(tiny_config(), 1);
        let x = Tensor::from_elem(ndarray::IxDyn(&[2, 3, 64, 32]), 0.5);
        let out = m.forward(&x, false).unwrap();
        assert_eq!(out.levels, vec![(8, 8, 4), (16, 4, 2), (32, 2, 1)]);
        assert_eq!(out.cls.shape(), &[2, 42, 4]);
        assert_eq!(out.ltrb.shape(), &[2, 42, 4]);
        assert!(out.ltrb.value().iter().all(|&v| v >= 0.0));
        assert!(m.forward(&Tensor::zeros(ndarray::IxDyn(&[1, 3, 40, 32])), false).is_err());
        assert!(m.forward(&Tensor::from_elem(ndarray::IxDyn(&[1, 3, 32, 32]), 1.5), false).is_err());
    }

    #[test]
    fn enhancer_runs_only_when_enabled() {
        let (images, _) = fixture(1);
        let with = build(
            DetectorConfig {
                use_sgie: true,
                ..tiny_config()
            },
            1,
        );
        detect(&with, &images[0]).unwrap();
        assert_eq!(with.sgie.as_ref().unwrap().enhancer.invocations(), 1);
        let without = build(tiny_config(), 1);
        detect(&without, &images[0]).unwrap();
        assert!(without.sgie.is_none());
    }

    #[test]
    fn zero_annotations_give_pure_background_loss() {
        let m = build(tiny_config(), 1);
        let (images, _) = fixture(1);
        let x = stack_images(&[&images[0]]).unwrap();
        let (_, r) = forward_train(&m, &x, &[&[]]).unwrap();
        assert_eq!(r.box_loss, 0.0);
        assert!(r.classification_loss > 0.0);
        assert_eq!(r.total, r.classification_loss);
    }

    #[test]
    fn training_input_errors() {
        let m = build(tiny_config(), 1);
        let (images, _) = fixture(1);
        let x = stack_images(&[&images[0]]).unwrap();
        let outside = [BoxAnnotation {
            category: Category::Buoy,
            bbox: BoxXywh::new(20.0, 20.0, 20.0, 5.0),
        }];
        assert!(forward_train(&m, &x, &[&outside]).is_err());
        let empty = Tensor::zeros(ndarray::IxDyn(&[0, 3, 32, 32]));
        assert!(forward_train(&m, &empty, &[]).is_err());
        assert!(train_detector(&m, &[], &[], &DetectorTrainSettings::default()).is_err());
    }

    #[test]
    fn threshold_one_detects_nothing() {
        let m = build(
            DetectorConfig {
                score_threshold: 1.0,
                ..tiny_config()
            },
            1,
        );
        // Push every score to saturation.
        for h in &m.head {
            h.cls_out.bias.as_ref().unwrap().update(|b| b.fill(1e3));
        }
        let (images, _) = fixture(1);
        assert!(detect(&m, &images[0]).unwrap().is_empty());
    }

    #[test]
    fn one_step_moves_every_module() {
        for use_sgie in [false, true] {
            let config = DetectorConfig {
                use_sgie,
                ..tiny_config()
            };
            // A smaller routing scale spreads these boxes over all three levels.
            let m = build(
                DetectorConfig {
                    assign_scale: 2.0,
                    ..config
                },
                3,
            );
            let opts = SynthOptions::new(64, 64, 1);
            let images: Vec<Tensor> = synth_dataset(2, &opts, &[SceneClass::Sunny], 5)
                .unwrap()
                .into_iter()
                .map(|s| s.image)
                .collect();
            let boxes = |v: &[(f64, f64, f64, f64)]| -> Vec<BoxAnnotation> {
                v.iter()
                    .map(|&(x, y, w, h)| BoxAnnotation {
                        category: Category::CargoShip,
                        bbox: BoxXywh::new(x, y, w, h),
                    })
                    .collect()
            };
            let objects = vec![
                boxes(&[(2.0, 2.0, 12.0, 12.0), (20.0, 30.0, 28.0, 20.0)]),
                boxes(&[(5.0, 5.0, 50.0, 40.0)]),
            ];
            let before: Vec<(String, Tensor)> = named_params(&m).into_iter().map(|(n, p)| (n, p.value())).collect();
            let settings = DetectorTrainSettings {
                steps: 1,
                batch_size: 2,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                ..Default::default()
            };
            train_detector(&m, &images, &objects, &settings).unwrap();
            let after = named_params(&m);
            let mut moved = std::collections::BTreeMap::<String, f64>::new();
            for ((name, old), (_, p)) in before.iter().zip(&after) {
                if !p.trainable() {
                    continue;
                }
                let module = name.split('.').take(2).collect::<Vec<_>>().join(".");
                let d = (&p.value() - old).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                *moved.entry(module).or_default() += d;
            }
            for (module, d) in &moved {
                if module.starts_with("sgie") {
                    assert_eq!(*d, 0.0, "{module} should stay frozen");
                } else {
                    assert!(*d > 0.0, "{module} did not move");
                }
            }
            assert!(moved.keys().any(|k| k.starts_with("head2")));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let m = build(tiny_config(), 4);
            let (images, objects) = fixture(3);
            let settings = DetectorTrainSettings {
                steps: 3,
                batch_size: 2,
                seed: 9,
                ..Default::default()
            };
            train_detector(&m, &images, &objects, &settings).unwrap()
        };
        assert_eq!(run(), run());
    }
}
