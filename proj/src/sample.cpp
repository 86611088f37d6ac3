#include "rls3/sample.hpp"

#include <fstream>
#include <stdexcept>

namespace rls3 {

using nlohmann::json;

namespace {

Eigen::Vector3d vec_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element position");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

const SnapshotObject* SampleRecord::find_object(std::string_view name) const {
  for (const auto& o : objects)
    if (o.name == name) return &o;
  return nullptr;
}

SampleRecord make_sample(const SceneSnapshot& snapshot, std::uint64_t id, std::uint64_t prompt_seed,
                         std::int64_t episode, std::int64_t iteration) {
  const auto prompt = generate_prompt(snapshot, prompt_seed);
  SampleRecord s;
  s.id = id;
  s.scene_id = snapshot.scene_id;
  s.objects = snapshot.objects;
  s.camera = snapshot.camera;
  s.subject = prompt.captions.subject;
  s.reference = prompt.captions.reference;
  s.relation = prompt.pair.relation;
  s.caption = prompt.captions.positive;
  s.question = prompt.captions.question;
  s.neg_term = prompt.captions.term_swapped;
  s.neg_object = prompt.captions.object_swapped;
  s.episode = episode;
  s.iteration = iteration;
  return s;
}

nlohmann::ordered_json to_json(const SampleRecord& s) {
  using ojson = nlohmann::ordered_json;
  auto vec = [](const Eigen::Vector3d& v) { return ojson::array({v.x(), v.y(), v.z()}); };
  ojson j;
  j["id"] = s.id;
  j["scene_id"] = s.scene_id;
  j["objects"] = ojson::array();
  for (const auto& o : s.objects) {
    ojson jo;
    jo["name"] = o.name;
    jo["pos"] = vec(o.position);
    jo["yaw"] = o.yaw;
    j["objects"].push_back(std::move(jo));
  }
  ojson cam;
  cam["pos"] = vec(s.camera.position);
  cam["yaw"] = s.camera.yaw;
  cam["pitch"] = s.camera.pitch;
  cam["roll"] = s.camera.roll;
  j["camera"] = std::move(cam);
  j["subject"] = s.subject;
  j["reference"] = s.reference;
  ojson rel;
  rel["horizontal"] = ojson::array();
  for (auto p : s.relation.horizontal.to_vector()) rel["horizontal"].push_back(std::string(to_string(p)));
  rel["vertical"] = s.relation.vertical ? ojson(std::string(to_string(*s.relation.vertical))) : ojson(nullptr);
  j["relation"] = std::move(rel);
  j["caption"] = s.caption;
  j["question"] = s.question;
  j["neg_term"] = s.neg_term;
  j["neg_object"] = s.neg_object;
  j["episode"] = s.episode;
  j["iteration"] = s.iteration;
  return j;
}

std::string to_jsonl_line(const SampleRecord& s) { return to_json(s).dump(); }

SampleRecord sample_from_json(const json& j) {
  try {
    SampleRecord s;
    s.id = j.at("id").get<std::uint64_t>();
    s.scene_id = j.at("scene_id").get<int>();
    for (const auto& o : j.at("objects"))
      s.objects.push_back({o.at("name").get<std::string>(), vec_from(o.at("pos")), o.at("yaw").get<double>()});
    const auto& cam = j.at("camera");
    s.camera.position = vec_from(cam.at("pos"));
    s.camera.yaw = cam.at("yaw").get<double>();
    s.camera.pitch = cam.at("pitch").get<double>();
    s.camera.roll = cam.at("roll").get<double>();
    s.subject = j.at("subject").get<std::string>();
    s.reference = j.at("reference").get<std::string>();
    const auto& rel = j.at("relation");
    for (const auto& h : rel.at("horizontal")) {
      auto p = primitive_from_string(h.get<std::string>());
      if (!p || is_vertical(*p)) throw std::invalid_argument("bad horizontal term");
      s.relation.horizontal.insert(*p);
    }
    if (!rel.at("vertical").is_null()) {
      auto p = primitive_from_string(rel.at("vertical").get<std::string>());
      if (!p || !is_vertical(*p)) throw std::invalid_argument("bad vertical term");
      s.relation.vertical = p;
    }
    s.caption = j.at("caption").get<std::string>();
    s.question = j.at("question").get<std::string>();
    s.neg_term = j.at("neg_term").get<std::string>();
    s.neg_object = j.at("neg_object").get<std::string>();
    s.episode = j.at("episode").get<std::int64_t>();
    s.iteration = j.at("iteration").get<std::int64_t>();
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("sample record schema violation: ") + e.what());
  }
}

SampleRecord sample_from_json(const nlohmann::ordered_json& j) { return sample_from_json(json::parse(j.dump())); }

std::vector<SampleRecord> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.filename().string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<SampleRecord>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& s : samples) out << to_jsonl_line(s) << '\n';
}

std::optional<ReplayIssue> check_sample(const SampleRecord& s) {
  auto issue = [&](std::string reason) { return ReplayIssue{0, s.id, std::move(reason)}; };
  const auto* a = s.find_object(s.subject);
  const auto* b = s.find_object(s.reference);
  if (!a || !b) return issue("subject or reference missing from objects");
  if (s.subject == s.reference) return issue("subject equals reference");
  SpatialRelation truth;
  try {
    truth = relation_between(a->position, b->position, s.camera);
  } catch (const DegenerateGeometry&) {
    return issue("degenerate geometry");
  }
  if (!(truth == s.relation)) return issue("stored relation differs from relation recomputed from geometry");
  if (s.caption != render_caption(s.subject, s.reference, truth)) return issue("caption inconsistent with relation");
  if (s.question != render_question(s.subject, s.reference)) return issue("question inconsistent with objects");
  if (s.neg_object != render_caption(s.reference, s.subject, truth)) return issue("object-swapped negative inconsistent");
  bool term_ok = false;
  for (auto p : truth.terms().to_vector()) {
    SpatialRelation swapped = truth;
    if (is_vertical(p)) {
      swapped.vertical = opposite(p);
    } else {
      swapped.horizontal.erase(p);
      swapped.horizontal.insert(opposite(p));
    }
    if (s.neg_term == render_caption(s.subject, s.reference, swapped)) term_ok = true;
  }
  if (!term_ok) return issue("term-swapped negative is not a single-term swap");
  return std::nullopt;
}

std::optional<ReplayIssue> replay_samples(const std::vector<SampleRecord>& samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (auto issue = check_sample(samples[i])) {
      issue->line = i + 1;
      return issue;
    }
  }
  return std::nullopt;
}

}  // namespace rls3
