use std::collections::HashMap;
use std::net::UdpSocket;
use std::thread;
use std::time::Duration;

use patchcast::harness::{ExperimentConfig, ImportanceLearner, LearnerPolicy, Sequence};
use patchcast::importance::QModel;
use patchcast::scheduler::{budget, ScheduleConfig, SelectionMethod};
use patchcast::transport::socket::{run_receiver, run_sender, ReceiverConfig, SenderConfig};

#[test]
fn closed_loop_over_loopback_uses_feedback_masks() {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.frame_count = 12;
    let seq = Sequence::load(&cfg, 1).unwrap();
    let grid = seq.grid(8).unwrap();

    let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let peer = rx.local_addr().unwrap();

    let boxes: HashMap<u32, _> = seq
        .boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|b| (i as u32, b)))
        .collect();
    let mut policy = LearnerPolicy {
        learner: ImportanceLearner::new(QModel::new(8, cfg.importance.clone()).unwrap(), grid).unwrap(),
        boxes,
        rate: 0.25,
        bootstrap_frames: 4,
    };
    let mut rcfg = ReceiverConfig::new(8, 64, 64, 12);
    rcfg.deadline = Duration::from_millis(500);
    rcfg.interpolate = true;
    let receiver = thread::spawn(move || run_receiver(&rx, &rcfg, &mut policy).unwrap());

    let sender = SenderConfig {
        peer,
        k: 8,
        schedule: ScheduleConfig::new(0.25, SelectionMethod::Dqn, 1),
        feedback_timeout: Duration::from_millis(1000),
    };
    let report = run_sender(&tx, &seq.frames, &sender).unwrap();
    let received = receiver.join().unwrap();

    assert_eq!(received.len(), 12);
    for (n, mask) in report.masks.iter().enumerate() {
        if n < 4 {
            assert!(mask.is_full());
        } else {
            assert_eq!(mask.popcount(), budget(0.25, 8).unwrap(), "frame {n}");
        }
        assert_eq!(&received[n].received, mask);
    }
    assert_eq!(received[0].frame, seq.frames[0]);
    assert!(report.feedback_received >= 8);
}
