mod common;

use std::sync::Arc;

use common::{planner_case, random_mappings, random_policy, randomize_memory, RawClient};
use modbus_topic_gateway::codec::{IecType, ValueType, WordOrder};
use modbus_topic_gateway::config::IoMapping;
use modbus_topic_gateway::planner::{plan, PlanError, PlannerPolicy};
use modbus_topic_gateway::sim::{FaultPolicy, Simulator};
use modbus_topic_gateway::wire::Table;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Fewest ranges over all ways to cut the sorted mappings into contiguous
/// groups that satisfy the gap and size rules.
fn brute_force_min(windows: &[(u32, u32)], max_gap: u32, limit: u32) -> usize {
    let n = windows.len();
    if n == 0 {
        return 0;
    }
    let mut best = usize::MAX;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut ok = true;
        let mut groups = 1;
        let mut start = windows[0].0;
        for i in 1..n {
            let cut = cuts >> (i - 1) & 1 == 1;
            if cut {
                groups += 1;
                start = windows[i].0;
            } else if windows[i].0 - windows[i - 1].1 > max_gap {
                ok = false;
            }
            if windows[i].1 - start > limit {
                ok = false;
            }
        }
        if ok {
            best = best.min(groups);
        }
    }
    best
}

fn reg(i: usize, offset: u16, width: u16) -> Arc<IoMapping> {
    let t = match width {
        1 => IecType::Int,
        2 => IecType::Real,
        4 => IecType::Lreal,
        n => IecType::String { len: n * 2 },
    };
    Arc::new(IoMapping::new("d", &format!("m{i}"), Table::HoldingRegister, offset, ValueType::Iec(t)))
}

prop_compose! {
    fn arb_layout(max: usize)(
        parts in prop::collection::vec((0u16..30, prop::sample::select(vec![1u16, 2, 4, 9])), 1..=max)
    ) -> Vec<Arc<IoMapping>> {
        let mut at = 0u16;
        parts.into_iter().enumerate().map(|(i, (gap, width))| {
            at += gap;
            let m = reg(i, at, width);
            at += width;
            m
        }).collect()
    }
}

proptest! {
    #[test]
    fn greedy_is_minimal(maps in arb_layout(11), gap in 0u16..20, cap in 10u16..60) {
        let policy = PlannerPolicy { max_gap_registers: gap, max_gap_bits: gap, max_read_count: Some(cap) };
        let windows: Vec<(u32, u32)> = maps.iter().map(|m| m.window()).collect();
        match plan(&maps, &policy) {
            Ok(p) => prop_assert_eq!(p.len(), brute_force_min(&windows, u32::from(gap), u32::from(cap))),
            Err(PlanError::MappingTooWide { width, .. }) => prop_assert!(width > cap),
            Err(e) => prop_assert!(false, "{}", e),
        }
    }

    #[test]
    fn larger_gap_never_adds_ranges(maps in arb_layout(30), gap in 0u16..40) {
        let a = plan(&maps, &PlannerPolicy::with_max_gap(gap)).unwrap();
        let b = plan(&maps, &PlannerPolicy::with_max_gap(gap + 1)).unwrap();
        prop_assert!(b.len() <= a.len());
    }

    #[test]
    fn complete_and_safe(maps in arb_layout(40), gap in 0u16..40) {
        let p = plan(&maps, &PlannerPolicy::with_max_gap(gap)).unwrap();
        let mut covered = 0;
        for r in &p.ranges {
            prop_assert!(r.count <= 125);
            for m in &r.members {
                let (s, e) = m.mapping.window();
                prop_assert!(s >= u32::from(r.start) && e <= r.end());
                prop_assert_eq!(u32::from(m.relative_offset), s - u32::from(r.start));
                covered += 1;
            }
        }
        prop_assert_eq!(covered, maps.len());
        for w in p.ranges.windows(2) {
            prop_assert!(w[0].end() <= u32::from(w[1].start));
        }
    }
}

#[tokio::test]
async fn planned_reads_equal_naive_reads() {
    let sim = Simulator::bind("127.0.0.1:0", FaultPolicy::default()).await.unwrap();
    let mut client = RawClient::connect(&sim).await;
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..150 {
        randomize_memory(&sim, &mut rng);
        let maps = random_mappings(&mut rng);
        let policy = random_policy(&mut rng);
        let order = if case % 2 == 0 { WordOrder::HighWordFirst } else { WordOrder::LowWordFirst };
        if let Err(e) = planner_case(&mut client, &maps, &policy, order).await {
            panic!("case {case}: {e}");
        }
    }
}
