mod common;

use std::collections::BTreeSet;

use common::{grade_leaf_oracle, merkle_oracle, World};
use examchain_core::campus::labeled_key;
use examchain_core::crypto::{hash, Digest32};
use examchain_core::state::{verify_certificate, CertVerdict, RejectReason, Role, TicketStatus, TxError};
use examchain_core::tx::{AttendanceEntry, Transaction, TxBody};
use proptest::prelude::*;

fn enroll(w: &mut World, label: &str, course: &str) -> examchain_core::crypto::KeyPair {
    let s = w.register(label, Role::Student);
    w.submit(&s, TxBody::Enroll { course_id: course.into() }).unwrap();
    s
}

fn attend(w: &mut World, teacher: &examchain_core::crypto::KeyPair, course: &str, session: &str, entries: &[(examchain_core::crypto::Address, bool)]) -> Result<(), TxError> {
    w.submit(
        teacher,
        TxBody::RecordAttendance {
            course_id: course.into(),
            session_id: session.into(),
            entries: entries.iter().map(|&(student, present)| AttendanceEntry { student, present }).collect(),
        },
    )
}

fn issue(w: &mut World, student: examchain_core::crypto::Address, exam: &str, course: &str) -> Result<(), TxError> {
    let c = w.controller();
    w.submit(
        &c,
        TxBody::IssueHallTicket {
            student,
            exam_id: exam.into(),
            course_id: course.into(),
        },
    )
}

#[test]
fn unknown_sender_is_rejected() {
    let mut w = World::new();
    let stranger = labeled_key("stranger");
    let r = w.submit(&stranger, TxBody::Enroll { course_id: "CS".into() });
    assert_eq!(r, Err(TxError::UnknownSender(stranger.address())));
}

#[test]
fn student_cannot_record_grades() {
    let mut w = World::new();
    let s = w.register("s", Role::Student);
    let r = w.submit(
        &s,
        TxBody::RecordGrade {
            student: s.address(),
            course_id: "CS".into(),
            exam_id: "E".into(),
            grade: "AA".into(),
        },
    );
    assert!(matches!(r, Err(TxError::UnauthorizedRole { role: Role::Student, .. })));
}

#[test]
fn replayed_transaction_has_a_bad_nonce() {
    let mut w = World::new();
    let s = w.register("s", Role::Student);
    let tx = w.sign(&s, TxBody::Enroll { course_id: "CS".into() });
    w.apply(&tx).unwrap();
    assert_eq!(w.apply(&tx), Err(TxError::BadNonce { expected: 1, found: 0 }));
}

#[test]
fn forged_signature_is_rejected() {
    let mut w = World::new();
    let s = w.register("s", Role::Student);
    let mut tx = w.sign(&s, TxBody::Enroll { course_id: "CS".into() });
    tx.body = TxBody::Enroll { course_id: "MA".into() };
    assert_eq!(w.apply(&tx), Err(TxError::BadSignature));
    let other = labeled_key("other");
    let forged = Transaction {
        sender: s.address(),
        ..Transaction::signed(&other, 0, TxBody::Enroll { course_id: "CS".into() })
    };
    assert_eq!(w.apply(&forged), Err(TxError::BadSignature));
}

#[test]
fn identity_registration() {
    let mut w = World::new();
    let s = w.register("s", Role::Student);
    let rec = w.state.identity(&s.address()).unwrap();
    assert_eq!(rec.role, Role::Student);
    assert_eq!(rec.real_identity_hash, hash(b"s"));
    let c = w.controller();
    let again = examchain_core::campus::register_body(&s, Role::Teacher, w.university, "s");
    assert_eq!(w.submit(&c, again), Err(TxError::AlreadyRegistered(s.address())));

    let before = w.state.identities().len();
    let addrs: BTreeSet<_> = (0..100).map(|i| w.register(&format!("bulk-{i}"), Role::Student).address()).collect();
    assert_eq!(addrs.len(), 100);
    assert_eq!(w.state.identities().len(), before + 100);
}

#[test]
fn enrollment() {
    let mut w = World::new();
    let s = enroll(&mut w, "s", "CS");
    assert!(w.state.enrollment(&s.address(), "CS").is_some());
    assert_eq!(
        w.submit(&s, TxBody::Enroll { course_id: "CS".into() }),
        Err(TxError::DuplicateEnrollment("CS".into()))
    );
}

#[test]
fn attendance_counts_and_session_replay() {
    let mut w = World::new();
    let t = w.register("t", Role::Teacher);
    let a = enroll(&mut w, "a", "CS").address();
    let b = enroll(&mut w, "b", "CS").address();
    attend(&mut w, &t, "CS", "S1", &[(a, true), (b, false)]).unwrap();
    assert_eq!(w.state.attendance(&a, "CS").sessions_attended, 1);
    assert_eq!(w.state.attendance(&a, "CS").sessions_held, 1);
    assert_eq!(w.state.attendance(&b, "CS").sessions_attended, 0);
    assert_eq!(w.state.attendance(&b, "CS").sessions_held, 1);
    assert!(matches!(
        attend(&mut w, &t, "CS", "S1", &[(a, true)]),
        Err(TxError::DuplicateSession { .. })
    ));
    assert_eq!(attend(&mut w, &t, "CS", "S2", &[]), Err(TxError::MalformedBatch));
    assert_eq!(attend(&mut w, &t, "CS", "S2", &[(a, true), (a, false)]), Err(TxError::MalformedBatch));
    let outsider = w.register("o", Role::Student).address();
    assert!(matches!(
        attend(&mut w, &t, "CS", "S2", &[(a, true), (outsider, true)]),
        Err(TxError::NotEnrolled { .. })
    ));
}

#[test]
fn hall_ticket_gate_and_lifecycle() {
    let mut w = World::new();
    let t = w.register("t", Role::Teacher);
    let p = w.register("p", Role::Principal);
    let a = enroll(&mut w, "a", "CS").address();
    let b = enroll(&mut w, "b", "CS").address();
    let z = enroll(&mut w, "z", "MA").address();
    for (i, (pa, pb)) in [(true, true), (true, false), (false, true), (true, false)].into_iter().enumerate() {
        attend(&mut w, &t, "CS", &format!("S{i}"), &[(a, pa), (b, pb)]).unwrap();
    }
    // a: 3 of 4, b: 2 of 4
    issue(&mut w, a, "E", "CS").unwrap();
    assert_eq!(
        issue(&mut w, b, "E", "CS"),
        Err(TxError::AttendanceBelowThreshold {
            attended: 2,
            held: 4,
            threshold: 75
        })
    );
    assert_eq!(issue(&mut w, a, "E", "CS"), Err(TxError::AlreadyIssued));
    // no sessions held at all
    assert!(matches!(issue(&mut w, z, "EM", "MA"), Err(TxError::AttendanceBelowThreshold { held: 0, .. })));

    assert_eq!(w.state.ticket_counts("E"), (1, 0, 1));
    let redeem = |w: &mut World, student| {
        w.submit(
            &p,
            TxBody::RedeemHallTicket {
                student,
                exam_id: "E".into(),
            },
        )
    };
    assert_eq!(redeem(&mut w, b), Err(TxError::NotIssued));
    redeem(&mut w, a).unwrap();
    assert_eq!(w.state.hall_ticket(&a, "E").unwrap().status, TicketStatus::Redeemed);
    assert_eq!(redeem(&mut w, a), Err(TxError::AlreadyRedeemed));
    assert_eq!(w.state.ticket_counts("E"), (1, 1, 0));
}

#[test]
fn question_bank_and_paper_generation() {
    let mut w = World::new();
    let setter = w.register("ps", Role::PaperSetter);
    let c = w.controller();
    let root = hash(b"bank");
    let commit = |w: &mut World, size| {
        w.submit(
            &setter,
            TxBody::CommitQuestionBank {
                exam_id: "E".into(),
                bank_root: root,
                bank_size: size,
            },
        )
    };
    assert_eq!(commit(&mut w, 0), Err(TxError::EmptyBank));
    assert_eq!(
        w.submit(
            &c,
            TxBody::GenerateExamPaper {
                exam_id: "E".into(),
                question_count: 3
            }
        ),
        Err(TxError::NoCommitment("E".into()))
    );
    commit(&mut w, 10).unwrap();
    assert_eq!(w.state.question_commitment("E").unwrap().bank_root, root);
    assert_eq!(commit(&mut w, 10), Err(TxError::AlreadyCommitted("E".into())));
    assert_eq!(
        w.submit(
            &c,
            TxBody::GenerateExamPaper {
                exam_id: "E".into(),
                question_count: 11
            }
        ),
        Err(TxError::QuestionCountExceedsBank {
            requested: 11,
            bank_size: 10
        })
    );
    w.submit(
        &c,
        TxBody::GenerateExamPaper {
            exam_id: "E".into(),
            question_count: 10,
        },
    )
    .unwrap();
    let ids = &w.state.exam_paper("E").unwrap().question_ids;
    assert_eq!(ids.iter().copied().collect::<BTreeSet<_>>(), (0..10).collect());
    assert!(matches!(
        w.submit(
            &c,
            TxBody::GenerateExamPaper {
                exam_id: "E".into(),
                question_count: 1
            }
        ),
        Err(TxError::PaperAlreadyGenerated(_))
    ));
}

#[test]
fn asset_traces() {
    let mut w = World::new();
    let p = w.register("p", Role::Principal);
    let mv = |w: &mut World, tag: &str, loc: &str, ts| {
        w.submit(
            &p,
            TxBody::RecordAssetMovement {
                asset_tag: tag.into(),
                location_id: loc.into(),
                timestamp: ts,
            },
        )
    };
    assert_eq!(mv(&mut w, "x", "A", 1), Err(TxError::UnknownAsset("x".into())));
    w.submit(
        &p,
        TxBody::RegisterAsset {
            asset_tag: "x".into(),
            location_id: "A".into(),
            timestamp: 5,
        },
    )
    .unwrap();
    mv(&mut w, "x", "B", 6).unwrap();
    assert_eq!(w.state.asset_trace("x").unwrap().len(), 2);
    assert_eq!(mv(&mut w, "x", "C", 6), Err(TxError::NonMonotonicTimestamp { last: 6, found: 6 }));
    assert!(matches!(
        w.submit(
            &p,
            TxBody::RegisterAsset {
                asset_tag: "x".into(),
                location_id: "A".into(),
                timestamp: 9
            }
        ),
        Err(TxError::AssetAlreadyRegistered(_))
    ));
}

#[test]
fn inventory_examples() {
    let mut w = World::new();
    let p = w.register("p", Role::Principal);
    let up = |w: &mut World, delta| {
        w.submit(
            &p,
            TxBody::UpdateInventory {
                item_code: "pen".into(),
                delta,
            },
        )
    };
    assert!(matches!(up(&mut w, -1), Err(TxError::NegativeInventory { result: -1, .. })));
    up(&mut w, 10).unwrap();
    up(&mut w, -4).unwrap();
    assert_eq!(w.state.inventory("pen"), 6);
    assert!(up(&mut w, i64::MAX).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn inventory_matches_scalar_fold(deltas in proptest::collection::vec(-40i64..=60, 0..24)) {
        let mut w = World::new();
        let p = w.register("p", Role::Principal);
        let mut oracle = 0i64;
        for d in deltas {
            let r = w.submit(&p, TxBody::UpdateInventory { item_code: "ink".into(), delta: d });
            if oracle + d >= 0 {
                prop_assert!(r.is_ok());
                oracle += d;
            } else {
                prop_assert!(r.is_err());
            }
            prop_assert_eq!(w.state.inventory("ink"), oracle);
        }
    }
}

/// A student with a redeemed ticket for (CS, E), plus evaluator and teacher.
fn graded_setup() -> (World, examchain_core::crypto::KeyPair, examchain_core::crypto::KeyPair) {
    let mut w = World::new();
    let t = w.register("t", Role::Teacher);
    let ev = w.register("ev", Role::Evaluator);
    let s = w.register("s", Role::Student);
    let c = w.controller();
    for course in ["CS", "MA", "PH"] {
        w.submit(&s, TxBody::Enroll { course_id: course.into() }).unwrap();
        attend(&mut w, &t, course, "S1", &[(s.address(), true)]).unwrap();
        let exam = format!("{course}-E");
        issue(&mut w, s.address(), &exam, course).unwrap();
        w.submit(
            &c,
            TxBody::RedeemHallTicket {
                student: s.address(),
                exam_id: exam,
            },
        )
        .unwrap();
    }
    (w, ev, s)
}

fn grade(w: &mut World, ev: &examchain_core::crypto::KeyPair, s: examchain_core::crypto::Address, course: &str, g: &str) -> Result<(), TxError> {
    w.submit(
        ev,
        TxBody::RecordGrade {
            student: s,
            course_id: course.into(),
            exam_id: format!("{course}-E"),
            grade: g.into(),
        },
    )
}

#[test]
fn grades_are_gated_and_write_once() {
    let (mut w, ev, s) = graded_setup();
    let other = w.register("other", Role::Student).address();
    assert_eq!(grade(&mut w, &ev, other, "CS", "AA"), Err(TxError::NoRedeemedTicket));
    assert_eq!(grade(&mut w, &ev, s.address(), "CS", "A+"), Err(TxError::InvalidGrade("A+".into())));
    grade(&mut w, &ev, s.address(), "CS", "AB").unwrap();
    assert_eq!(grade(&mut w, &ev, s.address(), "CS", "AA"), Err(TxError::DuplicateGrade));
    assert_eq!(w.state.grade(&s.address(), "CS", "CS-E").unwrap().grade, "AB");
}

#[test]
fn certificates_anchor_prior_grades() {
    let (mut w, ev, s) = graded_setup();
    let c = w.controller();
    let cert = |w: &mut World, program: &str| {
        w.submit(
            &c,
            TxBody::IssueCertificate {
                student: s.address(),
                program: program.into(),
            },
        )
    };
    assert_eq!(cert(&mut w, "BSc"), Err(TxError::NoGrades));
    let h1 = w.height;
    grade(&mut w, &ev, s.address(), "CS", "AA").unwrap();
    // a grade from the same block does not count yet
    assert_eq!(cert(&mut w, "BSc"), Err(TxError::NoGrades));
    w.next_block();
    cert(&mut w, "BSc").unwrap();
    let single = w.state.certificates().values().next().unwrap().clone();
    let leaf = grade_leaf_oracle(&s.address(), "CS", "CS-E", "AA", &ev.address(), h1);
    assert_eq!(single.grades_root, leaf);
    assert_eq!(cert(&mut w, "BSc"), Err(TxError::DuplicateCertificate));

    let h2 = w.height;
    grade(&mut w, &ev, s.address(), "MA", "BC").unwrap();
    grade(&mut w, &ev, s.address(), "PH", "FF").unwrap();
    w.next_block();
    cert(&mut w, "Transcript").unwrap();
    let three = w
        .state
        .certificates()
        .values()
        .find(|c| c.program == "Transcript")
        .unwrap()
        .clone();
    let leaves = [
        grade_leaf_oracle(&s.address(), "CS", "CS-E", "AA", &ev.address(), h1),
        grade_leaf_oracle(&s.address(), "MA", "MA-E", "BC", &ev.address(), h2),
        grade_leaf_oracle(&s.address(), "PH", "PH-E", "FF", &ev.address(), h2),
    ];
    assert_eq!(three.grades_root, merkle_oracle(&leaves));

    assert_eq!(verify_certificate(&w.state, &three.certificate_id, &three), CertVerdict::Accept);
    let mut fake = three.clone();
    fake.program = "MSc".into();
    assert_eq!(
        verify_certificate(&w.state, &three.certificate_id, &fake),
        CertVerdict::Reject(RejectReason::FieldMismatch)
    );
    assert_eq!(
        verify_certificate(&w.state, &Digest32([7; 32]), &three),
        CertVerdict::Reject(RejectReason::UnknownId)
    );
}

/// One accepted transaction of every kind; each must move the state root.
#[test]
fn every_kind_changes_the_root_and_replicas_agree() {
    let run = || {
        let mut w = World::new();
        let mut roots = vec![w.root()];
        let mut step = |w: &mut World, key: &examchain_core::crypto::KeyPair, body: TxBody| {
            w.submit(key, body).unwrap();
            let r = w.root();
            assert!(!roots.contains(&r));
            roots.push(r);
        };
        let c = w.controller();
        let reg = |label: &str, role| examchain_core::campus::register_body(&labeled_key(label), role, w.university, label);
        let (rt, rp, rs, rps, rev) = (
            reg("t", Role::Teacher),
            reg("p", Role::Principal),
            reg("s", Role::Student),
            reg("ps", Role::PaperSetter),
            reg("ev", Role::Evaluator),
        );
        for b in [rt, rp, rs, rps, rev] {
            step(&mut w, &c, b);
        }
        let (t, p, s, ps, ev) = (labeled_key("t"), labeled_key("p"), labeled_key("s"), labeled_key("ps"), labeled_key("ev"));
        let sa = s.address();
        step(&mut w, &s, TxBody::Enroll { course_id: "CS".into() });
        step(
            &mut w,
            &t,
            TxBody::RecordAttendance {
                course_id: "CS".into(),
                session_id: "1".into(),
                entries: vec![AttendanceEntry { student: sa, present: true }],
            },
        );
        step(
            &mut w,
            &c,
            TxBody::IssueHallTicket {
                student: sa,
                exam_id: "E".into(),
                course_id: "CS".into(),
            },
        );
        step(&mut w, &p, TxBody::RedeemHallTicket { student: sa, exam_id: "E".into() });
        step(
            &mut w,
            &ps,
            TxBody::CommitQuestionBank {
                exam_id: "E".into(),
                bank_root: hash(b"b"),
                bank_size: 5,
            },
        );
        step(&mut w, &c, TxBody::GenerateExamPaper { exam_id: "E".into(), question_count: 2 });
        step(
            &mut w,
            &p,
            TxBody::RegisterAsset {
                asset_tag: "x".into(),
                location_id: "A".into(),
                timestamp: 1,
            },
        );
        step(
            &mut w,
            &p,
            TxBody::RecordAssetMovement {
                asset_tag: "x".into(),
                location_id: "B".into(),
                timestamp: 2,
            },
        );
        step(&mut w, &p, TxBody::UpdateInventory { item_code: "pen".into(), delta: 3 });
        step(
            &mut w,
            &ev,
            TxBody::RecordGrade {
                student: sa,
                course_id: "CS".into(),
                exam_id: "E".into(),
                grade: "AA".into(),
            },
        );
        w.next_block();
        step(&mut w, &c, TxBody::IssueCertificate { student: sa, program: "BSc".into() });
        step(
            &mut w,
            &c,
            TxBody::Membership(examchain_core::tx::MembershipOp::Admit {
                kind: examchain_core::membership::MemberKind::AutonomousCollege,
                node_public_key: labeled_key("new-node").public_key(),
            }),
        );
        w.root()
    };
    assert_eq!(run(), run());
}
