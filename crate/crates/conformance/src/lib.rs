//! Holds the `acceptance` test target. It lives in its own package so that
//! its long training runs start after every other suite in the workspace.
