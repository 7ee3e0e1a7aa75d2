#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <unistd.h>

#include "confex/acquire.hpp"
#include "confex/csv.hpp"
#include "confex/error.hpp"

using namespace confex;
namespace fs = std::filesystem;

namespace {

const std::string kResource = "http://dbpedia.org/resource/";
const std::string kData = CONFEX_TEST_DATA;

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("confex-acquire-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

std::string read(const fs::path& p) { return csv::read_file(p.string()); }

AttributeTable attrs(std::vector<std::string> keys, std::vector<std::string> names,
                     std::vector<std::vector<std::optional<std::string>>> cells) {
    AttributeTable a;
    a.key_column = "key";
    a.keys = std::move(keys);
    a.attributes = std::move(names);
    a.cells = std::move(cells);
    return a;
}

std::vector<RawTriple> expected_hop1() {
    const auto rows = csv::parse(read(fs::path(kData) / "kg" / "expected_hop1.csv"));
    std::vector<RawTriple> out;
    for (std::size_t i = 1; i < rows.size(); ++i) out.push_back({rows[i][0], rows[i][1], rows[i][2]});
    return out;
}

LinkMap countries() {
    return build_link_map({"United States", "France", "Japan", "France"}, {}, kResource);
}

// Copies every fixture response into `cache` under the path fetch_kg expects.
void seed_cache(const std::string& cache) {
    for (const auto& entry : fs::directory_iterator(fs::path(kData) / "kg")) {
        if (entry.path().extension() != ".json") continue;
        const std::string entity = kResource + entry.path().stem().string();
        for (int hop : {1, 2}) {
            const fs::path dst = kg_cache_path(cache, entity, hop);
            fs::create_directories(dst.parent_path());
            fs::copy_file(entry.path(), dst, fs::copy_options::overwrite_existing);
        }
    }
}

// Serves fixture responses; "Broken" gets a malformed body, unknown entities no bindings.
struct FixtureEndpoint {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};

    FixtureEndpoint() {
        server.Get("/sparql", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            const std::string q = req.get_param_value("query");
            const auto open = q.find('<');
            const auto close = q.find('>', open);
            const std::string iri = q.substr(open + 1, close - open - 1);
            const std::string name = iri.substr(iri.find_last_of('/') + 1);
            const fs::path file = fs::path(kData) / "kg" / (name + ".json");
            if (name == "Broken") {
                res.set_content("{\"results\": [", "application/sparql-results+json");
            } else if (fs::exists(file)) {
                res.set_content(read(file), "application/sparql-results+json");
            } else {
                res.set_content(R"({"head":{"vars":["p","o"]},"results":{"bindings":[]}})",
                                "application/sparql-results+json");
            }
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FixtureEndpoint() {
        server.stop();
        thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/sparql"; }
};

}  // namespace

TEST_CASE("join_attributes examples") {
    Table base("base");
    base.add_column(Column::categorical("K", {"x", "y", "z"}));
    base.add_column(Column::categorical("GDP", {"1", "2", "3"}));

    SUBCASE("partial coverage leaves unmatched rows missing") {
        const auto a = attrs({"x", "y"}, {"A", "B"}, {{"p", "q"}, {"u", "v"}});
        const Table j = join_attributes(base, a, "K");
        REQUIRE(j.row_count() == 3);
        CHECK(j.column("A").is_missing(2));
        CHECK(j.column("B").is_missing(2));
        CHECK(j.column("A").label(*j.column("A").code(0)) == "p");
        CHECK(j.column("B").label(*j.column("B").code(1)) == "v");
    }
    SUBCASE("full coverage adds no missing cells") {
        const auto a = attrs({"z", "y", "x"}, {"A"}, {{"c", "b", "a"}});
        const Table j = join_attributes(base, a, "K");
        CHECK(j.column("A").missing_count() == 0);
        CHECK(j.column("A").label(*j.column("A").code(0)) == "a");
        CHECK(j.column("A").origin() == ColumnOrigin::acquired);
    }
    SUBCASE("collisions get a suffix") {
        const auto a = attrs({"x"}, {"GDP", "GDP__ext"}, {{"9"}, {"8"}});
        const Table j = join_attributes(base, a, "K");
        CHECK(j.column_names() == std::vector<std::string>{"K", "GDP", "GDP__ext", "GDP__ext__ext"});
        CHECK(j.column("GDP__ext").label(*j.column("GDP__ext").code(0)) == "9");
    }
    SUBCASE("numeric attributes are binned") {
        const auto a = attrs({"x", "y", "z"}, {"Pop"}, {{"10", "20", "30"}});
        CsvOptions typing;
        typing.default_bins = 2;
        const Table j = join_attributes(base, a, "K", typing);
        CHECK(j.column("Pop").kind() == ColumnKind::binned_numeric);
        CHECK(j.column("Pop").cardinality() <= 2);
    }
}

TEST_CASE("join_attributes errors") {
    Table base("base");
    base.add_column(Column::categorical("K", {"x", "y"}));
    const auto dup = attrs({"x", "x"}, {"A"}, {{"1", "2"}});
    CHECK_THROWS_AS(join_attributes(base, dup, "K"), Error);
    CHECK_THROWS_AS(join_attributes(base, attrs({"x"}, {"A"}, {{"1"}}), "Nope"), Error);
    CHECK_THROWS_AS(join_attributes(base, attrs({"x"}, {"A"}, {{"1", "2"}}), "K"), Error);
}

TEST_CASE("join matches numeric keys by value") {
    const Table base = ingest_csv_text("id,v\n7,a\n12,b\n7,c\n", "ids");
    const Table j = join_attributes(base, attrs({"7", "12"}, {"A"}, {{"seven", "twelve"}}), "id");
    const auto& a = j.column("A");
    CHECK(a.label(*a.code(0)) == "seven");
    CHECK(a.label(*a.code(1)) == "twelve");
    CHECK(a.label(*a.code(2)) == "seven");
}

TEST_CASE("join preserves base cardinality and columns") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<std::optional<std::string>> keys(n), other(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (rng() % 7 != 0) keys[i] = "k" + std::to_string(rng() % 10);
            other[i] = std::to_string(rng() % 3);
        }
        Table base("b");
        base.add_column(Column::categorical("K", keys));
        base.add_column(Column::categorical("V", other));
        AttributeTable a;
        a.attributes = {"V", "W"};
        a.cells.assign(2, {});
        for (int k = 0; k < 10; ++k) {
            if (rng() % 2) continue;
            a.keys.push_back("k" + std::to_string(k));
            a.cells[0].push_back(rng() % 4 ? std::optional<std::string>("v" + std::to_string(rng() % 3)) : std::nullopt);
            a.cells[1].push_back("w" + std::to_string(k));
        }
        const Table j = join_attributes(base, a, "K");
        REQUIRE(j.row_count() == n);
        REQUIRE(j.column_count() == 4);
        for (std::size_t c = 0; c < base.column_count(); ++c) {
            CHECK(j.column(c).name() == base.column(c).name());
            CHECK(j.column(c).same_cells(base.column(c)));
            CHECK(j.column(c).labels() == base.column(c).labels());
        }
        const auto& w = j.column("W");
        for (std::size_t i = 0; i < n; ++i) {
            const bool matched = keys[i] && std::find(a.keys.begin(), a.keys.end(), *keys[i]) != a.keys.end();
            CHECK(w.is_missing(i) == !matched);
            if (matched) CHECK(w.label(*w.code(i)) == "w" + keys[i]->substr(1));
        }
    }
}

TEST_CASE("aggregate_multivalue examples") {
    AggSpec spec;
    spec.tags = {{"population", AggTag::mean}, {"size", AggTag::count}, {"total", AggTag::sum}};
    const std::vector<RawTriple> raw{
        {"US", "population", "100"}, {"US", "population", "300"}, {"US", "name", "a"}, {"US", "name", "b"},
        {"FR", "size", "x"},         {"FR", "size", "y"},         {"FR", "size", "z"}, {"FR", "total", "2.5"},
        {"FR", "total", "4"},
    };
    const auto t = aggregate_multivalue(raw, spec, "country");
    CHECK(t.key_column == "country");
    CHECK(t.keys == std::vector<std::string>{"FR", "US"});
    CHECK(t.attributes == std::vector<std::string>{"name", "population", "size", "total"});
    CHECK(t.cells[1][1] == std::optional<std::string>("200"));
    CHECK(t.cells[0][1] == std::optional<std::string>("a"));
    CHECK(t.cells[2][0] == std::optional<std::string>("3"));
    CHECK(t.cells[3][0] == std::optional<std::string>("6.5"));
    CHECK_FALSE(t.cells[1][0].has_value());
    CHECK(t.duplicate_keys().empty());

    spec.tags["name"] = AggTag::max;
    CHECK_THROWS_AS(aggregate_multivalue(raw, spec), Error);
    spec.tags["name"] = AggTag::min;
    CHECK_THROWS_AS(aggregate_multivalue(raw, spec), Error);

    AggSpec minmax;
    minmax.tags = {{"v", AggTag::max}, {"w", AggTag::min}};
    const auto m = aggregate_multivalue({{"k", "v", "3"}, {"k", "v", "11"}, {"k", "w", "3"}, {"k", "w", "-1"}}, minmax);
    CHECK(m.cells[0][0] == std::optional<std::string>("11"));
    CHECK(m.cells[1][0] == std::optional<std::string>("-1"));
}

TEST_CASE("aggregation is order-insensitive for every tag but first") {
    std::mt19937_64 rng(5);
    for (AggTag tag : {AggTag::mean, AggTag::sum, AggTag::max, AggTag::min, AggTag::count}) {
        AggSpec spec;
        spec.fallback = tag;
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<RawTriple> raw;
            const int m = 1 + static_cast<int>(rng() % 30);
            std::uniform_real_distribution<double> u(-1e3, 1e3);
            for (int i = 0; i < m; ++i)
                raw.push_back({"k" + std::to_string(rng() % 4), "a" + std::to_string(rng() % 3),
                               std::to_string(u(rng))});
            const auto ref = format_attribute_table(aggregate_multivalue(raw, spec));
            for (int s = 0; s < 3; ++s) {
                std::shuffle(raw.begin(), raw.end(), rng);
                CHECK(format_attribute_table(aggregate_multivalue(raw, spec)) == ref);
            }
        }
    }
    const auto f1 = aggregate_multivalue({{"k", "a", "a"}, {"k", "a", "b"}}, AggSpec{});
    const auto f2 = aggregate_multivalue({{"k", "a", "b"}, {"k", "a", "a"}}, AggSpec{});
    CHECK(f1.cells[0][0] == std::optional<std::string>("a"));
    CHECK(f2.cells[0][0] == std::optional<std::string>("b"));
}

TEST_CASE("AggSpec from JSON") {
    const auto spec = AggSpec::from_json(R"({"population": "mean", "*": "count", "leader.age": "MAX"})");
    CHECK(spec.tag_for("population") == AggTag::mean);
    CHECK(spec.tag_for("leader.age") == AggTag::max);
    CHECK(spec.tag_for("other") == AggTag::count);
    CHECK(AggSpec::from_json("{}").tag_for("x") == AggTag::first);
    CHECK_THROWS_AS(AggSpec::from_json(R"({"a": "median"})"), Error);
    CHECK_THROWS_AS(AggSpec::from_json(R"({"a": 1})"), Error);
    CHECK_THROWS_AS(AggSpec::from_json("[1]"), Error);
    CHECK_THROWS_AS(AggSpec::from_json("{"), Error);
}

TEST_CASE("attribute table CSV round trip") {
    const auto a = attrs({"Korea, South", "US"}, {"GDP", "Leader"}, {{"1.5", std::nullopt}, {"say \"hi\"", "x"}});
    const std::string text = format_attribute_table(a);
    CHECK(text.substr(0, text.find('\n')) == "key,GDP,Leader");
    const auto b = parse_attribute_table(text);
    CHECK(b.keys == a.keys);
    CHECK(b.attributes == a.attributes);
    CHECK(b.cells == a.cells);

    TempDir dir;
    const std::string path = (dir.path / "a.csv").string();
    write_attribute_table(a, path);
    CHECK(read_attribute_table(path).cells == a.cells);

    CHECK_THROWS_AS(parse_attribute_table(""), Error);
    CHECK_THROWS_AS(parse_attribute_table("k,a\nx,1,2\n"), Error);
    CHECK_THROWS_AS(parse_attribute_table("k,a\n,1\n"), Error);
    CHECK_THROWS_AS(parse_attribute_table("k,a,a\nx,1,2\n"), Error);
    CHECK_THROWS_AS(read_attribute_table((dir.path / "missing.csv").string()), Error);
}

TEST_CASE("build_link_map") {
    const std::map<std::string, std::string> aliases{{"USA", kResource + "United_States"}};
    const auto m = build_link_map({"USA", "New Zealand", "", "USA"}, aliases, kResource);
    CHECK(m.mapping.at("USA") == kResource + "United_States");
    CHECK(m.mapping.at("New Zealand") == kResource + "New_Zealand");
    CHECK(m.unmatched.empty());

    const auto strict = build_link_map({"USA", "Peru"}, aliases, "");
    CHECK(strict.mapping.size() == 1);
    CHECK(strict.unmatched == std::vector<std::string>{"Peru"});

    TempDir dir;
    const auto path = dir.path / "alias.csv";
    std::ofstream(path) << "label,entity\nUSA,http://e/US\n\"Korea, South\",http://e/KR\n";
    const auto read_back = read_alias_file(path.string());
    CHECK(read_back.at("Korea, South") == "http://e/KR");
    std::ofstream(path) << "label,entity\nUSA\n";
    CHECK_THROWS_AS(read_alias_file(path.string()), Error);
}

TEST_CASE("fetch_kg replays a cached fixture") {
    TempDir cache;
    seed_cache(cache.str());
    KgOptions opt;
    opt.cache_dir = cache.str();
    opt.offline = true;
    const auto first = fetch_kg(countries(), opt);
    CHECK(first.triples == expected_hop1());
    CHECK(first.diagnostics.empty());
    CHECK(first.requests == 0);
    CHECK(first.cache_hits == 3);

    opt.max_in_flight = 1;
    const auto second = fetch_kg(countries(), opt);
    CHECK(second.triples == first.triples);

    const auto table = aggregate_multivalue(first.triples, AggSpec::from_json(R"({"ethnicGroupSize": "mean"})"));
    const auto size_col = std::find(table.attributes.begin(), table.attributes.end(), "ethnicGroupSize") -
                          table.attributes.begin();
    CHECK(table.cells[static_cast<std::size_t>(size_col)][2] == std::optional<std::string>("200"));
    CHECK(format_attribute_table(table) ==
          format_attribute_table(aggregate_multivalue(second.triples, AggSpec::from_json(R"({"ethnicGroupSize": "mean"})"))));
}

TEST_CASE("fetch_kg hop 2 prefixes linked attributes") {
    TempDir cache;
    seed_cache(cache.str());
    KgOptions opt;
    opt.cache_dir = cache.str();
    opt.offline = true;
    opt.hop = 2;
    const auto r = fetch_kg(countries(), opt);
    auto has = [&](const std::string& key, const std::string& attr, const std::string& value) {
        return std::find(r.triples.begin(), r.triples.end(), RawTriple{key, attr, value}) != r.triples.end();
    };
    CHECK(has("United States", "leader.age", "81"));
    CHECK(has("France", "leader.age", "46"));
    CHECK(has("Japan", "currency.currencyCode", "JPY"));
    CHECK(has("United States", "leader", "Joe_Biden"));
    // The party objects of the leaders are third-hop entities and are not followed.
    for (const auto& t : r.triples) CHECK(t.attribute.find('.') == t.attribute.rfind('.'));
    // Every linked object has a fixture, so no second-hop diagnostics.
    bool party_diag = false;
    for (const auto& d : r.diagnostics) party_diag |= d.hop == 2;
    CHECK_FALSE(party_diag);
}

TEST_CASE("fetch_kg against a local endpoint") {
    FixtureEndpoint endpoint;
    TempDir cache;
    KgOptions opt;
    opt.endpoint = endpoint.url();
    opt.cache_dir = cache.str();
    opt.timeout_seconds = 5;

    LinkMap links = countries();
    links.mapping["Atlantis"] = kResource + "Atlantis";
    links.mapping["Broken"] = kResource + "Broken";
    links.unmatched.push_back("Nowhere");

    const auto online = fetch_kg(links, opt);
    CHECK(online.triples == expected_hop1());
    CHECK(online.requests == 5);
    CHECK(endpoint.hits == 5);
    std::map<std::string, std::string> diag;
    for (const auto& d : online.diagnostics) diag[d.key] = d.message;
    CHECK(diag.size() == 3);
    CHECK(diag.count("Atlantis"));
    CHECK(diag.count("Broken"));
    CHECK(diag.count("Nowhere"));
    CHECK(fs::exists(kg_cache_path(cache.str(), kResource + "France", 1)));
    CHECK_FALSE(fs::exists(kg_cache_path(cache.str(), kResource + "Broken", 1)));
    for (const auto& e : fs::recursive_directory_iterator(cache.path))
        CHECK(e.path().string().find(".tmp") == std::string::npos);

    opt.offline = true;
    const auto replay = fetch_kg(links, opt);
    CHECK(replay.triples == online.triples);
    CHECK(endpoint.hits == 5);

    opt.offline = false;
    opt.hop = 2;
    const auto two = fetch_kg(countries(), opt);
    CHECK(std::find(two.triples.begin(), two.triples.end(), RawTriple{"Japan", "leader.age", "66"}) != two.triples.end());
    CHECK(two.cache_hits == 3);
}

TEST_CASE("fetch_kg records network failures per entity") {
    httplib::Server probe;
    const int port = probe.bind_to_any_port("127.0.0.1");
    probe.stop();  // nothing listens on the port now

    KgOptions opt;
    opt.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/sparql";
    opt.timeout_seconds = 2;
    const auto r = fetch_kg(countries(), opt);
    CHECK(r.triples.empty());
    CHECK(r.diagnostics.size() == 3);

    opt.endpoint = "not a url";
    CHECK_THROWS_AS(fetch_kg(countries(), opt), Error);
    opt.endpoint.clear();
    opt.hop = 3;
    CHECK_THROWS_AS(fetch_kg(countries(), opt), Error);

    KgOptions offline;
    offline.offline = true;
    const auto none = fetch_kg(countries(), offline);
    CHECK(none.diagnostics.size() == 3);
}

TEST_CASE("default cache dir honours the environment") {
    ::setenv("CONFEX_CACHE_DIR", "/tmp/somewhere", 1);
    CHECK(default_cache_dir() == "/tmp/somewhere");
    ::unsetenv("CONFEX_CACHE_DIR");
    CHECK(default_cache_dir() == ".confex-cache");
}
