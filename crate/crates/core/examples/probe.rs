use std::collections::{HashSet, VecDeque};
use safecase_core::scenario::*;

fn main() {
    let p = desk_params();
    let mode = ControllerMode::EpsilonIgnoring;
    let mut corners = Vec::new();
    for sensor_err in [0, p.epsilon] {
        for act_err in [-p.delta, p.delta] {
            corners.push(Disturbance { sensor_err, act_err, ped_enters: true });
        }
    }
    let mut queue: VecDeque<(VehicleState, usize)> = VecDeque::new();
    let mut seen: HashSet<(i64, i64)> = HashSet::new();
    let mut v0 = 0;
    while v0 <= 19_444 {
        let s = VehicleState::new(0, v0, p.range, false);
        if seen.insert((s.gap(), s.v)) { queue.push_back((s, 0)); }
        v0 += 250;
    }
    let mut max_depth = 0;
    let mut expanded = 0usize;
    let budget = 4_000_000;
    while let Some((state, depth)) = queue.pop_front() {
        if depth >= 600 || expanded > budget { continue; }
        expanded += 1;
        for d in &corners {
            let next = match closed_loop_step(&state, d, &p, mode) { Ok(s) => s, Err(_) => continue };
            if collision(&next) {
                println!("COLLISION at depth {} v={} gap={} (expanded {expanded})", depth + 1, next.v, next.gap());
                return;
            }
            if seen.insert((next.gap(), next.v)) {
                max_depth = max_depth.max(depth + 1);
                queue.push_back((next, depth + 1));
            }
        }
        if expanded % 500_000 == 0 {
            println!("expanded {expanded}, frontier {}, max_depth {max_depth}, seen {}", queue.len(), seen.len());
        }
    }
    println!("NO collision: expanded {expanded}, max_depth {max_depth}, seen {}", seen.len());
}
