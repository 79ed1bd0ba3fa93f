#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "maialab/neurons.hpp"

namespace maialab::interp {

struct HostObject;

/// Runtime value of the experiment-program dialect: none, bool, int, float,
/// string, list, an image handle, or a reference to a host binding. Lists
/// have reference semantics.
class Value {
public:
    using List = std::shared_ptr<std::vector<Value>>;

    Value() : v_(std::monostate{}) {}
    Value(bool b) : v_(b) {}
    Value(std::int64_t i) : v_(i) {}
    Value(double d) : v_(d) {}
    Value(std::string s) : v_(std::move(s)) {}
    Value(List l) : v_(std::move(l)) {}
    Value(neurons::ImageHandle image) : v_(std::move(image)) {}
    explicit Value(HostObject* host) : v_(host) {}

    static Value none() { return Value(); }
    static Value make_list(std::vector<Value> items = {}) {
        return Value(std::make_shared<std::vector<Value>>(std::move(items)));
    }

    bool is_none() const { return std::holds_alternative<std::monostate>(v_); }
    bool is_bool() const { return std::holds_alternative<bool>(v_); }
    bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
    bool is_float() const { return std::holds_alternative<double>(v_); }
    bool is_number() const { return is_int() || is_float(); }
    bool is_string() const { return std::holds_alternative<std::string>(v_); }
    bool is_list() const { return std::holds_alternative<List>(v_); }
    bool is_image() const { return std::holds_alternative<neurons::ImageHandle>(v_); }
    bool is_host() const { return std::holds_alternative<HostObject*>(v_); }

    bool as_bool() const;            // truthiness
    std::int64_t as_int() const;     // ProgramError unless integral
    double as_number() const;
    const std::string& as_string() const;
    const List& as_list() const;
    const neurons::ImageHandle& as_image() const;
    HostObject* as_host() const;

    /// Source-like rendering used in observations ("[0.92, 'dog']").
    std::string repr() const;

    bool equals(const Value& other) const;

private:
    std::variant<std::monostate, bool, std::int64_t, double, std::string, List,
                 neurons::ImageHandle, HostObject*>
        v_;
};

/// A host-side object exposed to programs by name ("system", "tools").
/// Methods receive evaluated arguments; attributes are read-only snapshots.
struct HostObject {
    std::string name;
    std::map<std::string, std::function<Value(std::vector<Value>&)>> methods;
    std::map<std::string, std::function<Value()>> attributes;
};

struct FunctionDef {
    std::string name;
    std::vector<std::string> params;
    std::string source;
    std::shared_ptr<const struct Module> module;  // parsed body, opaque
};

/// Parses a program that must consist of exactly one top-level function
/// definition. Throws ProgramShapeError when the shape is off and
/// SyntaxError on malformed code.
FunctionDef parse_program(const std::string& source);

struct SandboxLimits {
    double timeout_seconds = 10.0;
    std::uint64_t max_operations = 20'000'000;
};

/// Runs the function with the given host objects bound to its parameters.
/// The environment contains only those bindings plus the builtin whitelist
/// (len, str, range, min, max, abs, round, sorted, int, float). There is no
/// import mechanism and no file or network surface. Throws Error with code
/// Timeout on deadline, ProgramError on uncaught program faults; host errors
/// propagate unchanged.
Value execute_function(const FunctionDef& fn, std::vector<HostObject*> args,
                       const SandboxLimits& limits = {});

}  // namespace maialab::interp
