use super::{extract, AcousticModel, DecodeMode, Outputs, Pass, StackCaches};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor};

/// Incremental inference over one utterance.
///
/// Fed frames are buffered until a whole attention chunk is available, since
/// frames inside a chunk see each other. Outputs therefore trail the input
/// by up to `chunk_frames - 1` frames; [`AcousticModel::finish_stream`]
/// flushes the last partial chunk. Every output row is bit-identical to the
/// same row of a full-utterance forward pass regardless of how the input was
/// split.
#[derive(Debug, Clone)]
pub struct StreamState {
    mode: DecodeMode,
    max_feed: usize,
    fed: usize,
    processed: usize,
    pending: Vec<f64>,
    caches: StackCaches,
    finished: bool,
}

impl StreamState {
    pub fn mode(&self) -> DecodeMode {
        self.mode
    }

    /// Frames accepted so far.
    pub fn frames_fed(&self) -> usize {
        self.fed
    }

    /// Frames for which posteriors have been emitted.
    pub fn frames_emitted(&self) -> usize {
        self.processed
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }
}

/// Posteriors for a contiguous run of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamChunk {
    pub start_frame: usize,
    pub log_posteriors: Tensor,
    pub lid: Option<Tensor>,
}

impl StreamChunk {
    pub fn frames(&self) -> usize {
        self.log_posteriors.rows()
    }
}

impl AcousticModel {
    /// Starts a stream accepting at most `max_feed` frames per call.
    pub fn start_stream(&self, mode: DecodeMode, max_feed: usize) -> Result<StreamState> {
        self.check_mode(mode)?;
        if max_feed == 0 {
            return Err(Error::Config("stream feed size must be at least 1".into()));
        }
        Ok(StreamState {
            mode,
            max_feed,
            fed: 0,
            processed: 0,
            pending: Vec::new(),
            caches: StackCaches::default(),
            finished: false,
        })
    }

    /// Feeds frames starting at absolute index `start_frame`, which must be
    /// exactly the number of frames fed before.
    pub fn streaming_forward(
        &self,
        state: &mut StreamState,
        start_frame: usize,
        chunk: &Tensor,
    ) -> Result<StreamChunk> {
        if state.finished {
            return Err(Error::Stream("stream already finished".into()));
        }
        if start_frame != state.fed {
            return Err(Error::Stream(format!(
                "out-of-order chunk: starts at frame {start_frame}, expected {}",
                state.fed
            )));
        }
        self.check_features(chunk)?;
        if chunk.rows() > state.max_feed {
            return Err(Error::Stream(format!(
                "chunk of {} frames exceeds the feed limit of {}",
                chunk.rows(),
                state.max_feed
            )));
        }
        state.pending.extend_from_slice(chunk.data());
        state.fed += chunk.rows();
        let cf = self.config.chunk_frames;
        let ready = state.fed / cf * cf - state.processed;
        self.run(state, ready)
    }

    /// Processes any buffered frames and closes the stream.
    pub fn finish_stream(&self, state: &mut StreamState) -> Result<StreamChunk> {
        if state.finished {
            return Err(Error::Stream("stream already finished".into()));
        }
        let rest = state.fed - state.processed;
        let out = self.run(state, rest)?;
        state.finished = true;
        Ok(out)
    }

    fn run(&self, state: &mut StreamState, frames: usize) -> Result<StreamChunk> {
        let fd = self.config.feature_dim;
        let start = state.processed;
        let input: Vec<f64> = state.pending.drain(..frames * fd).collect();
        let features = Tensor::new(vec![frames, fd], input)?;
        let mask = super::streaming_mask(
            start,
            frames,
            start + frames,
            self.config.chunk_frames,
            self.config.left_context_frames,
        );
        let mut pass = Pass {
            start,
            mask: std::sync::Arc::new(mask),
            cache: Some(&mut state.caches),
        };
        let mut tape = Tape::inference();
        let x = tape.constant(features);
        let outputs = Outputs::for_decode(state.mode, self.config.combination_mode);
        let out = self.forward_impl(&mut tape, x, outputs, &mut pass)?;
        let (log_posteriors, lid) = extract(&tape, &out, state.mode);
        state.processed += frames;
        Ok(StreamChunk {
            start_frame: start,
            log_posteriors,
            lid,
        })
    }

    /// Streams a whole utterance in feeds of `feed` frames and concatenates
    /// the outputs.
    pub fn stream_utterance(
        &self,
        features: &Tensor,
        mode: DecodeMode,
        feed: usize,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_features(features)?;
        let feed = feed.max(1);
        let mut state = self.start_stream(mode, feed)?;
        let mut parts = Vec::new();
        let mut start = 0;
        while start < features.rows() {
            let n = feed.min(features.rows() - start);
            parts.push(self.streaming_forward(
                &mut state,
                start,
                &features.slice_rows(start, n),
            )?);
            start += n;
        }
        parts.push(self.finish_stream(&mut state)?);
        let posts: Vec<&Tensor> = parts.iter().map(|p| &p.log_posteriors).collect();
        let post = Tensor::vstack(&posts)?;
        let lid = if parts.iter().all(|p| p.lid.is_some()) {
            let l: Vec<&Tensor> = parts.iter().filter_map(|p| p.lid.as_ref()).collect();
            Some(Tensor::vstack(&l)?)
        } else {
            None
        };
        Ok((post, lid))
    }
}
