#include "fl/bus.hpp"

namespace fl::fed {

Visibility visibility_of(AssetKind kind) {
  switch (kind) {
    case AssetKind::ALGORITHM:
    case AssetKind::METRIC:
    case AssetKind::TEST_SCORE:
      return Visibility::PUBLIC;
    case AssetKind::MODEL:
    case AssetKind::RAW_DATA:
      return Visibility::PRIVATE;
    case AssetKind::MODEL_METADATA:
      return Visibility::AGGREGATOR_ONLY;
  }
  throw ConfigError("unknown asset kind");
}

AssetKind asset_of(MessageKind kind) {
  switch (kind) {
    case MessageKind::BATCH_COUNTS:
    case MessageKind::ROUND_TOTALS:
    case MessageKind::MASKED_UPDATE:
    case MessageKind::AGGREGATE_RESULT:
      return AssetKind::MODEL_METADATA;
    case MessageKind::TEST_SCORE:
      return AssetKind::TEST_SCORE;
    case MessageKind::FULL_MODEL:
      return AssetKind::MODEL;
    case MessageKind::RAW_DATA_ROWS:
      return AssetKind::RAW_DATA;
  }
  throw ConfigError("unknown message kind");
}

std::vector<std::uint8_t> Message::wire() const {
  ByteWriter w;
  w.put_u8(static_cast<std::uint8_t>(kind));
  w.put_u32(from_org);
  w.put_u32(to_org);
  w.put_u64(round);
  w.put_u8(attributed_org ? 1 : 0);
  w.put_u32(attributed_org.value_or(0));
  w.put_u64(payload.size());
  w.put_bytes(payload);
  return w.take();
}

bool check_permission(const Message& msg, std::uint32_t aggregator_org) {
  if (msg.from_org == msg.to_org) return true;  // never leaves the org
  const AssetKind asset = asset_of(msg.kind);
  switch (visibility_of(asset)) {
    case Visibility::PRIVATE:
      return false;
    case Visibility::AGGREGATOR_ONLY:
      // Partners may hand metadata to the aggregator only; the aggregator
      // may return aggregated metadata to partners.
      if (msg.from_org == aggregator_org) return true;
      return msg.to_org == aggregator_org;
    case Visibility::PUBLIC:
      if (asset == AssetKind::TEST_SCORE && msg.attributed_org.has_value())
        return false;  // scores must be anonymised
      return true;
  }
  return false;
}

void Bus::register_org(std::uint32_t org, Handler handler) {
  handlers_[org] = std::move(handler);
}

void Bus::unregister_org(std::uint32_t org) { handlers_.erase(org); }

void Bus::post(const Message& msg) {
  if (!check_permission(msg, aggregator_org_)) {
    violations_.push_back("message kind " +
                          std::to_string(static_cast<int>(msg.kind)) + " from org " +
                          std::to_string(msg.from_org) + " to org " +
                          std::to_string(msg.to_org) + " denied");
    throw PermissionViolationError(violations_.back());
  }
  const auto bytes = msg.wire();
  ByteWriter framed;
  framed.put_u32(static_cast<std::uint32_t>(bytes.size()));
  framed.put_bytes(bytes);
  const auto& frame = framed.bytes();
  transcript_.insert(transcript_.end(), frame.begin(), frame.end());
  ++n_delivered_;
  const auto it = handlers_.find(msg.to_org);
  if (it == handlers_.end())
    throw ProtocolError("bus: no handler registered for org " +
                        std::to_string(msg.to_org));
  it->second(msg);
}

}  // namespace fl::fed
