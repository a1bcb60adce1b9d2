use jim_bench::{graphs, pursuit_step};
use jim_core::trainer::compute_gradients;

#[test]
fn graph_fixtures_are_seeded() {
    assert_eq!(graphs(8, 5, 3), graphs(8, 5, 3));
    assert_ne!(graphs(8, 5, 3), graphs(8, 5, 4));
    assert!(graphs(8, 5, 3).iter().all(|g| g.n() == 8));
}

#[test]
fn pursuit_batch_trains() {
    let (mut nets, batch, method) = pursuit_step(2);
    assert_eq!(batch.len(), 4);
    let s = compute_gradients(&mut nets.online, &nets.target, &batch, &method).unwrap();
    assert!(s.losses.total.is_finite());
}
