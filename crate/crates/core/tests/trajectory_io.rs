use nnql::mdp::{Policy, StepStream, Trajectory};

fn sample(dim: usize, steps: usize) -> Trajectory {
    let env = nnql::mdp::Ar1Env::new(dim, 0.3).unwrap();
    let policy = Policy::uniform(dim, 2).unwrap();
    nnql::harness::experiment_trajectory(&env, &policy, steps, 21).unwrap()
}

#[test]
fn csv_round_trip_is_exact() {
    for dim in [1, 3] {
        let traj = sample(dim, 500);
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(&buf[..], Some(2)).unwrap();
        assert_eq!(back, traj);
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }
}

#[test]
fn stream_yields_each_transition_once() {
    let traj = sample(2, 50);
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let mut stream = StepStream::new(&buf[..]).unwrap();
    assert_eq!(stream.dim(), 2);
    let mut seen = 0;
    while let Some((step, next)) = stream.next_transition().unwrap() {
        seen += 1;
        assert_eq!(&step, traj.step(seen));
        assert_eq!(&next, traj.next_state(seen));
    }
    assert_eq!(seen, 50);
    assert!(stream.next_transition().unwrap().is_none());
}

#[test]
fn malformed_files_are_rejected() {
    let bad = [
        "",
        "t,s0,a\n1,0.5,0\n",
        "t,s0,a,r\n1,0.5,0,1.0\n",
        "t,s0,a,r\n1,0.5,0,1.0\n3,0.5,,\n",
        "t,s0,a,r\n1,x,0,1.0\n2,0.5,,\n",
        "t,s0,a,r\n1,0.5,0,1.0\n2,0.5,,\n3,0.5,0,1.0\n",
        "t,s0,a,r\n1,0.5,0,inf\n2,0.5,,\n",
    ];
    for text in bad {
        assert!(Trajectory::read_csv(text.as_bytes(), None).is_err(), "{text:?}");
    }
    assert!(Trajectory::read_csv("t,s0,a,r\n1,0.5,3,1.0\n2,0.5,,\n".as_bytes(), Some(2)).is_err());
    let ok = Trajectory::read_csv("t,s0,a,r\n1,0.5,3,1.0\n2,0.5,,\n".as_bytes(), None).unwrap();
    assert_eq!(ok.num_actions(), 4);
}
