use alloc::vec::Vec;

use super::net::{rows_to_clips, ContextInput};
use super::{BoundNet, Clip, DenoiseRow, NetParams, PromptEmbedding, TimestepSchedule};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::streamctx::ContextWindow;
use crate::tensorgrad::{Graph, NodeId};

/// Few-step renoising sampler for one clip.
///
/// Starts from pure noise at the first timestep; after each clean-sample
/// prediction except the last, renoises to the next timestep with fresh
/// noise. Draws exactly `schedule.len()` noise clips from `rng`.
pub fn sample_clip(
    params: &NetParams,
    ctx: &ContextWindow,
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    rng: &mut NoiseStream,
) -> Result<Clip> {
    let mut clips = sample_clips(params, &[ctx], prompt, schedule, core::slice::from_mut(rng))?;
    Ok(clips.pop().expect("one row in, one clip out"))
}

/// Batched [`sample_clip`]: row `i` conditions on `contexts[i]` and draws
/// its noise only from `streams[i]`. Nothing is recorded for gradients.
pub fn sample_clips(
    params: &NetParams,
    contexts: &[&ContextWindow],
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    streams: &mut [NoiseStream],
) -> Result<Vec<Clip>> {
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph, false);
    let inputs = contexts
        .iter()
        .map(|c| ContextInput::Values(c.summary_values()))
        .collect();
    let out = sample_on_graph(&mut graph, &bound, inputs, prompt, schedule, streams)?;
    rows_to_clips(graph.value(out), params.arch().dims.frame_dim)
}

/// Runs the sampler with an already bound network. The returned node holds
/// the final clean predictions, one row per context; it is tracked when the
/// network or a context input is.
pub(crate) fn sample_on_graph(
    graph: &mut Graph,
    bound: &BoundNet,
    contexts: Vec<ContextInput>,
    prompt: &PromptEmbedding,
    schedule: &TimestepSchedule,
    streams: &mut [NoiseStream],
) -> Result<NodeId> {
    if contexts.len() != streams.len() {
        return Err(Error::Shape {
            what: "noise streams",
            expected: contexts.len(),
            got: streams.len(),
        });
    }
    let dims = bound.arch().dims;
    let steps = schedule.values();
    let mut x: Vec<Clip> = streams
        .iter_mut()
        .map(|s| Clip::new(dims.frame_dim, s.normal_vec(dims.clip_numel())))
        .collect::<Result<_>>()?;
    let mut out = None;
    for (k, &t) in steps.iter().enumerate() {
        let rows: Vec<DenoiseRow<'_>> = x
            .iter()
            .zip(&contexts)
            .map(|(x_t, ctx)| DenoiseRow {
                x_t,
                t,
                context: ctx.clone(),
                prompt,
            })
            .collect();
        let pred = bound.predict_rows(graph, &rows)?;
        if let Some(&t_next) = steps.get(k + 1) {
            let value = graph.value(pred);
            x = streams
                .iter_mut()
                .enumerate()
                .map(|(r, s)| {
                    let eps = s.normal_vec(dims.clip_numel());
                    let data = value
                        .row_slice(r)
                        .iter()
                        .zip(eps)
                        .map(|(&x0, e)| (1.0 - t_next) * x0 + t_next * e)
                        .collect();
                    Clip::new(dims.frame_dim, data)
                })
                .collect::<Result<_>>()?;
        }
        out = Some(pred);
    }
    Ok(out.expect("schedule is never empty"))
}
