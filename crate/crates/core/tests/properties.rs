mod common;

use std::collections::BTreeMap;

use mrreuse::dfs::Dfs;
use mrreuse::engine::{sink_contents, submit, SubmitConfig};
use mrreuse::exec::ExecConfig;
use mrreuse::lang::{compile, render};
use mrreuse::matcher::{pairwise_plan_traversal, subsumes};
use mrreuse::plan::{parse_plan, render_plan, split_into_jobs, to_physical, PhysicalPlan, WorkflowId};
use mrreuse::reference::run_script;
use mrreuse::repository::Repository;
use mrreuse::subjob::{enumerate_candidates, Heuristic};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_contains, random_script, write_tables};

fn script(seed: u64) -> String {
    random_script(&mut ChaCha8Rng::seed_from_u64(seed), 6, "out")
}

fn physical(s: &str) -> PhysicalPlan {
    to_physical(&compile(s).unwrap())
}

fn exec() -> ExecConfig {
    ExecConfig {
        parallelism: 2,
        reducers: 3,
        chunk_size: 4 << 10,
        overwrite: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rendered_scripts_compile_to_the_same_plan(seed in any::<u64>()) {
        let s = script(seed);
        let again = render(&compile(&s).unwrap());
        prop_assert_eq!(physical(&again), physical(&s), "rendered:\n{}", again);
    }

    #[test]
    fn plan_text_round_trips(seed in any::<u64>()) {
        let p = physical(&script(seed));
        prop_assert_eq!(parse_plan(&render_plan(&p)).unwrap(), p);
    }

    #[test]
    fn every_plan_contains_itself(seed in any::<u64>()) {
        let p = physical(&script(seed));
        prop_assert!(subsumes(&p, &p));
        let m = pairwise_plan_traversal(&p, &p).unwrap();
        prop_assert!(m.whole_job);
        prop_assert!(brute_force_contains(&p, &p));
    }

    #[test]
    fn heuristic_point_sets_nest(seed in any::<u64>()) {
        let wf = split_into_jobs(&physical(&script(seed)), &WorkflowId("w".into()));
        for job in &wf.jobs {
            let ids = |h| enumerate_candidates(&wf.id, job, h).into_iter().map(|p| p.op_id).collect::<Vec<_>>();
            let (c, a, n) = (ids(Heuristic::Conservative), ids(Heuristic::Aggressive), ids(Heuristic::NoHeuristic));
            prop_assert!(c.iter().all(|x| a.contains(x)));
            prop_assert!(a.iter().all(|x| n.contains(x)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The MapReduce engine and the in-memory reference evaluator agree.
    #[test]
    fn engine_matches_reference(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path().join("dfs")).unwrap();
        let repo = Repository::open(dir.path().join("repo")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        write_tables(&dfs, 300, &mut rng);
        let s = random_script(&mut rng, 6, "out");
        let inputs: BTreeMap<String, Vec<String>> =
            ["r", "s"].iter().map(|t| (t.to_string(), dfs.read_lines(t).unwrap())).collect();
        let mut expected = run_script(&s, &inputs).unwrap();
        for v in expected.values_mut() {
            v.sort_unstable();
        }
        let r = submit(&dfs, &repo, &s, &SubmitConfig::plain(exec())).unwrap();
        prop_assert_eq!(sink_contents(&dfs, &r.sinks).unwrap(), expected, "script:\n{}", s);
    }

    /// Injected Stores never change what the user's sinks receive.
    #[test]
    fn instrumentation_does_not_change_outputs(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path().join("dfs")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        write_tables(&dfs, 300, &mut rng);
        let s = random_script(&mut rng, 6, "out");
        let plain_repo = Repository::open(dir.path().join("plain")).unwrap();
        let r = submit(&dfs, &plain_repo, &s, &SubmitConfig::plain(exec())).unwrap();
        let expected = sink_contents(&dfs, &r.sinks).unwrap();
        let repo = Repository::open(dir.path().join("repo")).unwrap();
        let cfg = SubmitConfig { exec: exec(), reuse: true, heuristic: Some(Heuristic::NoHeuristic), admit: true, canonical: false };
        for _ in 0..2 {
            let r = submit(&dfs, &repo, &s, &cfg).unwrap();
            prop_assert_eq!(&sink_contents(&dfs, &r.sinks).unwrap(), &expected, "script:\n{}", s);
        }
    }
}
