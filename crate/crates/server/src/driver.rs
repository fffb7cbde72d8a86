use std::time::Duration;

use copilot_sim::session::SessionStatus;

use crate::{AppState, Pace};

/// Ensures a task is advancing `id` while it is running. At most one task
/// drives a session; it exits once the session stops running.
pub(crate) fn ensure_driving(state: &AppState, id: &str) {
    let (steps, period) = match state.pace() {
        Pace::Manual => return,
        Pace::RealTime => {
            let cfg = state.manager().config();
            let steps = cfg.decimation.max(1);
                        (steps, Duration::from_secs_f64(cfg.scenario.dt * steps as f64))
        }
        Pace::Accelerated { steps, period } => (steps.max(1), period),
    };
    if !state.inner.driving.lock().expect("driver set poisoned").insert(id.to_string()) {
        return;
    }
    let state = state.clone();
    let id = id.to_string();
    tokio::spawn(async move {
        let mut interval = (!period.is_zero()).then(|| tokio::time::interval(period));
        loop {
            match interval.as_mut() {
                Some(i) => {
                    i.tick().await;
                }
                None => tokio::task::yield_now().await,
            }
            let (s, i) = (state.clone(), id.clone());
            let status = tokio::task::spawn_blocking(move || s.manager().tick(&i, steps)).await;
            let keep_going = matches!(status, Ok(Ok(SessionStatus::Running)));
            if !keep_going {
                // Re-check under the set lock so a concurrent start either
                // sees this task still registered or spawns a new one.
                let mut set = state.inner.driving.lock().expect("driver set poisoned");
                let running = matches!(state.manager().view(&id), Ok(v) if v.status == SessionStatus::Running);
                if !running {
                    set.remove(&id);
                    break;
                }
            }
        }
    });
}
