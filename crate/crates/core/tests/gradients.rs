use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reks::encoder::EncoderKind;
use reks::kg::{EntityId, EntityKind, KnowledgeGraph, Relation};
use reks::mdp::RewardMode;
use reks::model::{ModelShape, ReksModel};
use reks::train::{
    assign_rewards, batch_objective, rollout_session, LossWeights, PreparedSession, SessionRollout, TrainConfig,
};
use reks::transe::{init_embeddings, EmbeddingTable};

fn random_graph(rng: &mut ChaCha8Rng, products: usize) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    let p: Vec<EntityId> = (0..products)
        .map(|i| g.add_entity(EntityKind::Product, &format!("p{i}")))
        .collect();
    let b = g.add_entity(EntityKind::Brand, "b");
    let c = g.add_entity(EntityKind::Category, "c");
    for &x in &p {
        if rng.gen_bool(0.6) {
            g.add_bidirectional(x, Relation::ProducedBy, b).unwrap();
        }
        if rng.gen_bool(0.6) {
            g.add_bidirectional(x, Relation::BelongTo, c).unwrap();
        }
    }
    for _ in 0..products {
        let (a, z) = (rng.gen_range(0..products), rng.gen_range(0..products));
        if a != z {
            g.add_edge(p[a], Relation::CoOccur, p[z]).unwrap();
            g.add_bidirectional(p[a], Relation::AlsoBought, p[z]).unwrap();
        }
    }
    g
}

struct Case {
    g: KnowledgeGraph,
    table: EmbeddingTable,
    model: ReksModel,
    rollouts: Vec<SessionRollout>,
}

fn case(seed: u64, encoder: EncoderKind) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, 8);
    let d = 4;
    let table = init_embeddings(g.num_entities(), Relation::COUNT, d, seed).unwrap();
    let model = ReksModel::new(
        ModelShape {
            encoder,
            embed_dim: d,
            session_dim: d,
            state_dim: 3,
            dropout: if encoder == EncoderKind::Gru { 0.3 } else { 0.0 },
        },
        seed,
    )
    .unwrap();
    let cfg = TrainConfig {
        sampling_sizes: vec![3, 2],
        ..TrainConfig::default()
    };
    let mut rollouts = Vec::new();
    for s in 0..3 {
        let items: Vec<EntityId> = (0..rng.gen_range(1..4)).map(|_| EntityId(rng.gen_range(0..8))).collect();
        let session = PreparedSession {
            id: format!("s{s}"),
            user: None,
            last_item: items.last().copied(),
            items,
            target: Some(EntityId(rng.gen_range(0..8))),
        };
        if let Some(mut r) = rollout_session(&model, &table, &g, &session, &cfg, true, &mut rng).unwrap() {
            assign_rewards(&mut r, &g, &table, session.target.unwrap(), RewardMode::Full, 0.99).unwrap();
            rollouts.push(r);
        }
    }
    Case {
        g,
        table,
        model,
        rollouts,
    }
}

fn objective(c: &Case, model: &ReksModel, w: LossWeights) -> f64 {
    batch_objective(model, &c.table, &c.g, &c.rollouts, 0.7, w, false).unwrap().0.total
}

fn max_rel_error(c: &Case, w: LossWeights) -> f64 {
    let grad = batch_objective(&c.model, &c.table, &c.g, &c.rollouts, 0.7, w, true)
        .unwrap()
        .1
        .unwrap();
    let params = c.model.parameters();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut m = c.model.clone();
        let mut p = params.clone();
        p[i] += h;
        m.set_parameters(&p).unwrap();
        let up = objective(c, &m, w);
        p[i] -= 2.0 * h;
        m.set_parameters(&p).unwrap();
        let down = objective(c, &m, w);
        let num = (up - down) / (2.0 * h);
        let scale = grad[i].abs().max(num.abs());
        if scale > 1e-6 {
            worst = worst.max((grad[i] - num).abs() / scale);
        }
    }
    worst
}

#[test]
fn combined_loss_gradient_through_whole_model() {
    for seed in 0..10 {
        for enc in [EncoderKind::Gru, EncoderKind::Mean] {
            let c = case(seed, enc);
            let err = max_rel_error(&c, LossWeights { reward: 0.2, ce: 1.0 });
            assert!(err < 1e-3, "seed {seed} {enc}: {err}");
        }
    }
}

#[test]
fn combined_gradient_is_linear_in_the_parts() {
    for seed in 0..5 {
        let c = case(seed, EncoderKind::Gru);
        let grad = |w| batch_objective(&c.model, &c.table, &c.g, &c.rollouts, 0.7, w, true).unwrap().1.unwrap();
        let r = grad(LossWeights { reward: 1.0, ce: 0.0 });
        let ce = grad(LossWeights { reward: 0.0, ce: 1.0 });
        let both = grad(LossWeights { reward: 0.2, ce: 1.0 });
        for i in 0..both.len() {
            assert!((both[i] - (0.2 * r[i] + ce[i])).abs() < 1e-12);
        }
    }
}
