#include "samtl/model.hpp"

#include <algorithm>

namespace samtl {

TokenBatch make_batch(const std::vector<const TokenSequence*>& seqs,
                      int cap_len) {
  if (seqs.empty()) throw DataError("make_batch: empty batch");
  int longest = 1;
  for (const auto* s : seqs) {
    if (s->true_len > cap_len)
      throw DataError("SequenceTooLong: " + std::to_string(s->true_len) +
                      " tokens > model max " + std::to_string(cap_len) +
                      " for '" + s->source + "'");
    longest = std::max(longest, s->true_len);
  }
  TokenBatch b;
  b.batch_size = static_cast<int>(seqs.size());
  b.seq_len = longest;
  b.ids.assign(static_cast<size_t>(b.batch_size) * longest, 0);
  b.valid.assign(static_cast<size_t>(b.batch_size) * longest, 0);
  for (size_t i = 0; i < seqs.size(); ++i) {
    const auto& seq = *seqs[i];
    for (int j = 0; j < seq.true_len; ++j) {
      b.ids[i * static_cast<size_t>(longest) + j] =
          seq.ids[static_cast<size_t>(j)];
      b.valid[i * static_cast<size_t>(longest) + j] = 1;
    }
  }
  return b;
}

TokenBatch make_batch(const std::vector<TokenSequence>& seqs, int cap_len) {
  std::vector<const TokenSequence*> ptrs;
  ptrs.reserve(seqs.size());
  for (const auto& s : seqs) ptrs.push_back(&s);
  return make_batch(ptrs, cap_len);
}

}  // namespace samtl
