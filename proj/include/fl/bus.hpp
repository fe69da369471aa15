#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fl/common.hpp"

namespace fl::fed {

enum class AssetKind : std::uint8_t {
  ALGORITHM = 0,
  METRIC = 1,
  MODEL = 2,
  MODEL_METADATA = 3,
  TEST_SCORE = 4,
  RAW_DATA = 5,
};

enum class Visibility : std::uint8_t { PUBLIC = 0, PRIVATE = 1, AGGREGATOR_ONLY = 2 };

Visibility visibility_of(AssetKind kind);

enum class MessageKind : std::uint8_t {
  BATCH_COUNTS = 0,      // partner -> aggregator, cleartext scalar counts
  ROUND_TOTALS = 1,      // aggregator -> partners
  MASKED_UPDATE = 2,     // partner -> aggregator
  AGGREGATE_RESULT = 3,  // aggregator -> partners, still under common masks
  TEST_SCORE = 4,        // anonymised, public
  FULL_MODEL = 5,        // never allowed off-org; exists for the fault suite
  RAW_DATA_ROWS = 6,     // never allowed off-org; exists for the fault suite
};

AssetKind asset_of(MessageKind kind);

struct Message {
  MessageKind kind = MessageKind::BATCH_COUNTS;
  std::uint32_t from_org = 0;
  std::uint32_t to_org = 0;
  std::uint64_t round = 0;
  // Org attribution carried inside the asset (only meaningful for test
  // scores; scores must be anonymised before they leave the org).
  std::optional<std::uint32_t> attributed_org;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> wire() const;
};

// Asset permission table: ALGORITHM/METRIC public, MODEL private,
// MODEL_METADATA aggregator-only (and masked), TEST_SCORE public but
// anonymised, RAW_DATA never leaves its org.
bool check_permission(const Message& msg, std::uint32_t aggregator_org);

// In-process message bus. Every message is serialized, permission-checked
// and appended to the transcript before the handler runs, so checks and
// replay operate on real bytes.
class Bus {
 public:
  using Handler = std::function<void(const Message&)>;

  explicit Bus(std::uint32_t aggregator_org) : aggregator_org_(aggregator_org) {}

  void register_org(std::uint32_t org, Handler handler);
  void unregister_org(std::uint32_t org);
  // Throws PermissionViolationError on a forbidden message.
  void post(const Message& msg);

  const std::vector<std::uint8_t>& transcript() const { return transcript_; }
  std::size_t messages_delivered() const { return n_delivered_; }
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::uint32_t aggregator_org_;
  std::map<std::uint32_t, Handler> handlers_;
  std::vector<std::uint8_t> transcript_;
  std::vector<std::string> violations_;
  std::size_t n_delivered_ = 0;
};

}  // namespace fl::fed
