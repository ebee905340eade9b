use std::collections::BTreeSet;

use topicsig::corpus::build_matrices;
use topicsig::ingest::build_vocabulary;
use topicsig::synth::{generate, topic_recovery_spec};
use topicsig::topics::{fit_online_vb, greedy_alignment, total_variation, OnlineVbConfig, Priors};

/// Fit the recovery corpus, align against the generator's topics, and check
/// the tracked ELBO.
#[test]
fn online_vb_recovers_generator_topics() {
    let spec = topic_recovery_spec(11);
    let stream = generate(&spec).unwrap();
    let records = stream.all_records();
    let vocab = build_vocabulary(&records, &BTreeSet::new()).unwrap();
    let bags: Vec<_> = build_matrices(&records, &vocab).unwrap().values().flat_map(|m| m.bags().cloned()).collect();
    assert_eq!(bags.len(), 5000);

    let truth: Vec<Vec<f64>> = spec
        .phi_true
        .iter()
        .map(|row| {
            let mut r = vec![0.0; vocab.len()];
            for (j, &p) in row.iter().enumerate() {
                r[vocab.get(&spec.labels[j].prefixed()).unwrap()] = p;
            }
            r
        })
        .collect();
    let cfg = OnlineVbConfig {
        passes: 300,
        track_elbo: true,
        ..OnlineVbConfig::default()
    };
    let (model, trace) = fit_online_vb(&bags, vocab.len(), 5, Priors::for_topics(5), &cfg, &vocab.digest()).unwrap();
    let al = greedy_alignment(&model, &truth);
    assert_eq!(al.iter().collect::<BTreeSet<_>>().len(), 5);
    for z in 0..5 {
        let tv = total_variation(model.topic(al[z]), &truth[z]);
        assert!(tv < 0.1, "topic {z}: TV {tv}");
    }
    assert_eq!(trace.elbo.len(), 300);
    let (first, last) = (trace.elbo[0], *trace.elbo.last().unwrap());
    assert!(last > first, "ELBO fell from {first} to {last}");
}
