#include "ftnn/fetch.hpp"

#ifdef FTNN_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include "ftnn/error.hpp"
#include "ftnn/mnist.hpp"

namespace ftnn {

namespace {

const char* kFiles[4] = {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                         "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"};

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string path;    // leading slash, no trailing slash
};

UrlParts split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw DomainError("bad url: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    UrlParts parts;
    if (path_start == std::string::npos) {
        parts.origin = url;
        parts.path = "";
    } else {
        parts.origin = url.substr(0, path_start);
        parts.path = url.substr(path_start);
    }
    while (!parts.path.empty() && parts.path.back() == '/') parts.path.pop_back();
    return parts;
}

bool download(const std::string& base_url, const char* filename, const std::string& target) {
    const UrlParts parts = split_url(base_url);
#ifndef FTNN_HAVE_OPENSSL
    if (parts.origin.rfind("https://", 0) == 0) {
        std::cerr << "  (skipping " << parts.origin << ": built without TLS support)\n";
        return false;
    }
#endif
    httplib::Client client(parts.origin);
    client.set_follow_location(true);
    client.set_connection_timeout(20);
    client.set_read_timeout(120);
    const std::string path = parts.path + "/" + filename;
    auto res = client.Get(path);
    if (!res || res->status != 200 || res->body.empty()) {
        std::cerr << "  " << parts.origin << path << " -> "
                  << (res ? "http " + std::to_string(res->status) : "connection failed") << "\n";
        return false;
    }
    std::ofstream f(target, std::ios::binary | std::ios::trunc);
    f.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    return static_cast<bool>(f);
}

}  // namespace

void fetch_mnist(const std::string& dir, const std::string& base_url) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> mirrors;
    if (!base_url.empty()) {
        mirrors.push_back(base_url);
    } else {
        mirrors = {"https://ossci-datasets.s3.amazonaws.com/mnist", "http://yann.lecun.com/exdb/mnist"};
    }
    for (const char* filename : kFiles) {
        const std::string target = (fs::path(dir) / filename).string();
        if (fs::exists(target)) {
            std::cout << "  " << filename << " already present\n";
            continue;
        }
        bool ok = false;
        for (const std::string& mirror : mirrors) {
            std::cout << "  fetching " << filename << " from " << mirror << "\n";
            if (download(mirror, filename, target)) {
                ok = true;
                break;
            }
        }
        if (!ok) throw IoError(std::string("could not download ") + filename + " from any mirror");
    }
    // parse both pairs so a bad download fails loudly here
    const auto train = load_idx((fs::path(dir) / kFiles[0]).string(), (fs::path(dir) / kFiles[1]).string());
    const auto test = load_idx((fs::path(dir) / kFiles[2]).string(), (fs::path(dir) / kFiles[3]).string());
    std::cout << "  train: " << train.count << " images " << train.height << "x" << train.width
              << ", test: " << test.count << " images\n";
}

}  // namespace ftnn
