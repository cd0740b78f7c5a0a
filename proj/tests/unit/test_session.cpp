#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>
#include <thread>

#include "vidann/error.hpp"
#include "vidann/session.hpp"
#include "vidann/synth.hpp"

using namespace vidann;

namespace {

struct Fixture {
  SyntheticVideo video = synth_generate(scene_by_name("random_5"), 7);
  double now = 1000.0;
  SessionEngine engine{video.frames, std::make_shared<GradientExtractor>(), nullptr, [this] { return now += 1.5; }};
  const GroundTruthTrack& truth() const { return video.tracks[0]; }

  SessionConfig config(bool suggestions = true) const {
    SessionConfig c;
    c.session_id = "s1";
    c.video = "synth:random_5:7";
    c.object_id = truth().object_id;
    c.suggestions = suggestions;
    c.seed = 3;
    c.guidance.horizon = 40;
    c.guidance.candidate_count = 4;
    return c;
  }
  int first() const { return truth().boxes.begin()->first; }
  BoundingBox box(int f) const { return truth().boxes.at(f); }
};

std::vector<EventKind> kinds(const SessionState& s) {
  std::vector<EventKind> out;
  for (const auto& e : s.events) out.push_back(e.kind);
  return out;
}

}  // namespace

TEST_CASE("start builds a full track with a suggestion") {
  Fixture fx;
  const int f0 = fx.first();
  const SessionState s = fx.engine.start(fx.config(), f0, fx.box(f0));
  CHECK(s.keyframes.size() == 1);
  CHECK(static_cast<int>(s.track.points.size()) == fx.video.frames->frame_count());
  CHECK(s.track.box(f0) == fx.box(f0));
  CHECK(s.track.object_id == fx.truth().object_id);
  REQUIRE(s.suggestion);
  CHECK(*s.suggestion > f0);
  CHECK(kinds(s) == std::vector{EventKind::session_start, EventKind::suggestion_issued});
  CHECK(s.events[0].timestamp == 1001.5);
  CHECK_FALSE(s.finalized);

  const SessionState quiet = fx.engine.start(fx.config(false), f0, fx.box(f0));
  CHECK_FALSE(quiet.suggestion);
  CHECK(kinds(quiet) == std::vector{EventKind::session_start});

  CHECK_THROWS_AS(fx.engine.start(fx.config(), -1, fx.box(f0)), ValidationError);
  CHECK_THROWS_AS(fx.engine.start(fx.config(), fx.video.frames->frame_count(), fx.box(f0)), ValidationError);
  CHECK_THROWS_AS(fx.engine.start(fx.config(), f0, {0, 0, 0, 5}), ValidationError);
}

TEST_CASE("adding keyframes records overrides of a pending suggestion") {
  Fixture fx;
  const int f0 = fx.first();
  SessionState s = fx.engine.start(fx.config(), f0, fx.box(f0));
  const int suggested = *s.suggestion;
  s = fx.engine.add_keyframe(s, suggested, fx.box(suggested));
  CHECK(kinds(s).back() == EventKind::suggestion_issued);
  CHECK(kinds(s)[2] == EventKind::keyframe_added);
  CHECK(s.track.box(suggested) == fx.box(suggested));

  const int other = f0 + 1;
  REQUIRE(s.suggestion);
  REQUIRE(*s.suggestion != other);
  const int pending = *s.suggestion;
  s = fx.engine.add_keyframe(s, other, fx.box(other));
  const auto& over = s.events[s.events.size() - 2];
  CHECK(over.kind == EventKind::suggestion_overridden);
  CHECK(over.frame == other);
  CHECK(over.suggestion == pending);
  CHECK(s.keyframes.size() == 3);
  CHECK(std::is_sorted(s.keyframes.begin(), s.keyframes.end(),
                       [](const Keyframe& a, const Keyframe& b) { return a.frame < b.frame; }));
  CHECK_THROWS_AS(fx.engine.add_keyframe(s, other, fx.box(other)), ValidationError);

  const SessionSummary sum = summarize(s);
  CHECK(sum.n_box == 3);
  CHECK(sum.keyframes_added == 2);
  CHECK(sum.overrides == 1);
  CHECK(sum.suggestions_issued == 3);
  CHECK(sum.elapsed_seconds == doctest::Approx(s.events.back().timestamp - s.events.front().timestamp));
}

TEST_CASE("remove and finalize") {
  Fixture fx;
  const int f0 = fx.first();
  SessionState s = fx.engine.start(fx.config(false), f0, fx.box(f0));
  CHECK_THROWS_AS(fx.engine.remove_keyframe(s, f0), ValidationError);
  CHECK_THROWS_AS(fx.engine.remove_keyframe(s, f0 + 3), NotFound);
  const SessionState one = s;
  s = fx.engine.add_keyframe(s, f0 + 20, fx.box(f0 + 20));
  s = fx.engine.remove_keyframe(s, f0 + 20);
  CHECK(s.keyframes == one.keyframes);
  CHECK(s.track == one.track);
  CHECK(summarize(s).keyframes_removed == 1);

  const SessionState done = fx.engine.finalize(s);
  CHECK(done.finalized);
  CHECK(kinds(done).back() == EventKind::finalized);
  CHECK(fx.engine.finalize(done) == done);
  CHECK_THROWS_AS(fx.engine.add_keyframe(done, f0 + 5, fx.box(f0 + 5)), Conflict);
  CHECK_THROWS_AS(fx.engine.remove_keyframe(done, f0), Conflict);
}

TEST_CASE("changed_range") {
  Track a, b;
  for (int f = 0; f < 10; ++f) a.points[f] = b.points[f] = {{double(f), 0, 5, 5}, Provenance::visual, 0.5};
  CHECK_FALSE(changed_range(a, b));
  b.points[3].box.x += 1;
  b.points[7].confidence = 0.1;
  CHECK(changed_range(a, b) == FrameRange{3, 7});
  b.points.erase(9);
  CHECK(changed_range(a, b) == FrameRange{3, 9});
}

TEST_CASE("keyframe mutations change only the neighbouring segments") {
  Fixture fx;
  const int f0 = fx.first();
  SessionState s = fx.engine.start(fx.config(false), f0, fx.box(f0));
  s = fx.engine.add_keyframe(s, f0 + 60, fx.box(f0 + 60));
  const SessionState before = s;
  s = fx.engine.add_keyframe(s, f0 + 30, fx.box(f0 + 30));
  const auto r = changed_range(before.track, s.track);
  REQUIRE(r);
  CHECK(r->first > f0);
  CHECK(r->last < f0 + 60);
}

TEST_CASE("replay reproduces the state bit for bit") {
  Fixture fx;
  std::mt19937_64 rng(8);
  const int f0 = fx.first();
  const int last = fx.truth().boxes.rbegin()->first;
  SessionState s = fx.engine.start(fx.config(), f0, fx.box(f0));
  for (int step = 0; step < 5; ++step) {
    if (s.keyframes.size() > 1 && rng() % 3 == 0) {
      s = fx.engine.remove_keyframe(s, s.keyframes[1 + rng() % (s.keyframes.size() - 1)].frame);
    } else {
      int f = f0 + static_cast<int>(rng() % static_cast<unsigned>(last - f0 + 1));
      while (std::any_of(s.keyframes.begin(), s.keyframes.end(), [f](const Keyframe& k) { return k.frame == f; })) {
        f = f0 + (f - f0 + 1) % (last - f0 + 1);
      }
      s = fx.engine.add_keyframe(s, f, fx.box(f));
    }
  }
  s = fx.engine.finalize(s);
  CHECK(fx.engine.replay(s.events) == s);

  std::ostringstream out;
  write_events_jsonl(out, s.events);
  std::istringstream in(out.str());
  const auto events = read_events_jsonl(in);
  CHECK(events == s.events);
  CHECK(fx.engine.replay(events) == s);

  // a prefix replays to the intermediate state
  const std::vector<AnnotationEvent> prefix(s.events.begin(), s.events.begin() + 2);
  CHECK(fx.engine.replay(prefix).events == prefix);

  // a log cut between the events of one mutation is rejected
  const auto added = std::find_if(s.events.begin(), s.events.end(),
                                  [](const AnnotationEvent& e) { return e.kind == EventKind::keyframe_added; });
  REQUIRE(added != s.events.end());
  CHECK_THROWS_AS(fx.engine.replay(std::span(s.events.begin(), added + 1)), ValidationError);
  auto wrong_suggestion = s.events;
  wrong_suggestion[1].suggestion = -5;
  CHECK_THROWS_AS(fx.engine.replay(wrong_suggestion), ValidationError);
  CHECK_THROWS_AS(fx.engine.replay(std::span<const AnnotationEvent>{}), ValidationError);
}

TEST_CASE("event and snapshot json") {
  Fixture fx;
  const int f0 = fx.first();
  SessionState s = fx.engine.start(fx.config(), f0, fx.box(f0));
  s = fx.engine.add_keyframe(s, f0 + 11, fx.box(f0 + 11));
  for (const auto& e : s.events) CHECK(event_from_json(event_to_json(e)) == e);
  CHECK(config_from_json(config_to_json(s.config)) == s.config);
  CHECK(snapshot_from_json(snapshot_to_json(s)) == s);
  CHECK(event_kind_from_string("keyframe_removed") == EventKind::keyframe_removed);
  CHECK_THROWS_AS(event_kind_from_string("bogus"), ValidationError);

  std::istringstream gap("{\"seq\":0,\"ts\":1,\"kind\":\"finalized\"}\n{\"seq\":2,\"ts\":1,\"kind\":\"finalized\"}\n");
  CHECK_THROWS_AS(read_events_jsonl(gap), ParseError);
  std::istringstream junk("not json\n");
  CHECK_THROWS_AS(read_events_jsonl(junk), ParseError);
}

TEST_CASE("session handle serializes writers and publishes snapshots") {
  Fixture fx;
  const int f0 = fx.first();
  SessionHandle h(fx.engine.start(fx.config(false), f0, fx.box(f0)));
  const auto first = h.snapshot();
  CHECK_THROWS(h.update([](const SessionState&) -> SessionState { throw Conflict("nope"); }));
  CHECK(h.snapshot() == first);
  int commits = 0;
  std::vector<std::thread> writers;
  for (int t = 0; t < 4; ++t) {
    writers.emplace_back([&, t] {
      h.update([&](const SessionState& s) { return fx.engine.add_keyframe(s, f0 + 10 + t, fx.box(f0 + 10 + t)); },
               [&](const SessionState&) { ++commits; });
    });
  }
  for (auto& w : writers) w.join();
  CHECK(commits == 4);
  CHECK(h.snapshot()->keyframes.size() == 5);
  CHECK(first->keyframes.size() == 1);
}
