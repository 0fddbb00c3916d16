#pragma once

#include "ddr/app/config.hpp"

namespace ddr::testing {

// A benchmark and model small enough to run every mode in seconds.
inline ExperimentConfig tiny_experiment_config(std::uint64_t seed = 1) {
  ExperimentConfig c = default_experiment_config();
  c.seed = seed;
  c.benchmark.source.vocab_words = 120;
  c.benchmark.source.num_topics = 10;
  c.benchmark.source.topic_words = 6;
  c.benchmark.source.num_docs = 60;
  c.benchmark.source.num_queries = 40;
  c.benchmark.source.doc_len_min = 8;
  c.benchmark.source.doc_len_max = 14;
  c.benchmark.source_dev_queries = 20;
  c.benchmark.hard_negatives = 4;
  c.benchmark.targets.resize(2);
  for (auto& t : c.benchmark.targets) {
    t.vocab_words = 100;
    t.num_topics = 8;
    t.topic_words = 6;
    t.num_docs = 40;
    t.num_queries = 12;
    t.doc_len_min = 8;
    t.doc_len_max = 14;
  }
  c.encoder.num_layers = 1;
  c.encoder.hidden_dim = 16;
  c.encoder.num_heads = 2;
  c.encoder.ffn_dim = 32;
  c.encoder.vocab_size = 512;
  c.encoder.max_len = 24;
  c.rem = {4, 4, 0.0, 1.0};
  for (TrainingConfig* t : {&c.source_dam, &c.target_dam}) {
    t->steps = 20;
    t->warmup_steps = 2;
    t->docs_per_batch = 8;
  }
  for (TrainingConfig* t : {&c.rem_training, &c.full_training}) {
    t->steps = 20;
    t->warmup_steps = 2;
    t->queries_per_batch = 8;
  }
  c.curve_every = 10;
  return c;
}

}  // namespace ddr::testing
